//! Background Green's functions, exact cell integrals, and the
//! FFT-accelerated volume convolution.
//!
//! The discrete operator is `apply(f)[n] = k0^2 sum_m K[n - m] f[m]` with
//! `K[r] = integral of G over the cell centred at offset r`. Near cells are
//! integrated exactly by reducing the area (volume) integral to a boundary
//! integral of the radial antiderivative of `G r^(d-1)`; far cells use
//! tensor Gauss-Legendre.

use crate::fftn::{smooth_size, FftNd, FftScratch};
use crate::medium::{Background, Grid, MediumError, Point};
use crate::quadrature::gauss_legendre;
use crate::special::{bessel_jy01, hankel2_01, zh2_1_regular};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use thiserror::Error;

const J: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Offsets closer than this many cells are integrated exactly.
const NEAR_CELLS: f64 = 2.5;

#[derive(Debug, Error, PartialEq)]
pub enum GreensError {
    #[error("frequency must be positive, got {0} Hz")]
    BadFrequency(f64),
    #[error("field has {got} cells, grid has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("padding {got} on axis {axis} is below the minimum {min}")]
    Padding { axis: usize, got: usize, min: usize },
    #[error(transparent)]
    Medium(#[from] MediumError),
}

/// Angular frequency and background wavenumber `k0` with
/// `k0^2 = omega^2 kappa0 rho0`, `Re k0 > 0`, `Im k0 <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundWavenumber {
    pub omega: f64,
    pub k0: C64,
}

impl BackgroundWavenumber {
    pub fn new(freq_hz: f64, background: &Background) -> Result<Self, GreensError> {
        if !(freq_hz > 0.0 && freq_hz.is_finite()) {
            return Err(GreensError::BadFrequency(freq_hz));
        }
        let omega = 2.0 * PI * freq_hz;
        let kappa0 = background.compressibility()?;
        let k2 = kappa0 * (omega * omega * background.rho0);
        // Principal root: Re > 0 and Im carries the sign of Im k^2 (<= 0).
        Ok(Self { omega, k0: k2.sqrt() })
    }

    pub fn freq_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }

    pub fn k_squared(&self) -> C64 {
        self.k0 * self.k0
    }
}

/// Free-space outgoing Green's function at distance `r > 0`.
pub fn green(dims: usize, k: C64, r: f64) -> C64 {
    if dims == 2 {
        -0.25 * J * hankel2_01(k * r).0
    } else {
        (-J * k * r).exp() / (4.0 * PI * r)
    }
}

/// Quadrature budget for cells outside the exact-integration radius. The
/// order switch sits between lattice distances so that rounding in cell
/// offsets never changes the rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accuracy {
    /// Volume-kernel entries.
    Kernel,
    /// Source and receiver couplings, where a few 1e-5 suffice.
    Coupling,
}

fn far_order(dist_cells: f64, accuracy: Accuracy) -> usize {
    match accuracy {
        Accuracy::Kernel if dist_cells <= 7.9 => 4,
        Accuracy::Kernel => 3,
        Accuracy::Coupling if dist_cells <= 7.9 => 3,
        Accuracy::Coupling => 2,
    }
}

/// Integral of `G(|x|)` over the axis-aligned cell of side `h` centred at
/// `offset` (the observation point sits at the origin).
pub fn cell_integral(dims: usize, k: C64, offset: &Point, h: f64) -> C64 {
    cell_integral_with(dims, k, offset, h, Accuracy::Kernel)
}

pub fn cell_integral_with(dims: usize, k: C64, offset: &Point, h: f64, accuracy: Accuracy) -> C64 {
    // Reflection symmetry of the cell and of G, made exact in floating point.
    let offset = &[offset[0].abs(), offset[1].abs(), offset[2].abs()];
    let dist = offset[..dims].iter().map(|x| x * x).sum::<f64>().sqrt();
    if dist <= NEAR_CELLS * h {
        if dims == 2 {
            boundary_integral_2d(k, [offset[0], offset[1]], h)
        } else {
            boundary_integral_3d(k, *offset, h)
        }
    } else {
        tensor_gauss(dims, k, offset, h, far_order(dist / h, accuracy))
    }
}

/// The classical alternative: self cell and offsets up to `2h` replaced by
/// the disk (sphere) of equal measure integrated analytically, midpoint
/// rule beyond.
pub fn cell_integral_equal_measure(dims: usize, k: C64, offset: &Point, h: f64) -> C64 {
    let r = offset[..dims].iter().map(|x| x * x).sum::<f64>().sqrt();
    if dims == 2 {
        let a = h / PI.sqrt();
        let ka = k * a;
        if r < 1e-12 * h {
            -0.25 * J * 2.0 * PI / (k * k) * zh2_1_regular(ka)
        } else if r <= 2.0 * h {
            // Graf: the disk average of H0 about a point outside the disk.
            -0.25 * J * 2.0 * PI * a / k * bessel_jy01(ka).j1 * hankel2_01(k * r).0
        } else {
            green(2, k, r) * h * h
        }
    } else {
        let a = h * (3.0 / (4.0 * PI)).cbrt();
        let ka = k * a;
        if r < 1e-12 * h {
            ((-J * ka).exp() * (1.0 + J * ka) - 1.0) / (k * k)
        } else if r <= 2.0 * h {
            green(3, k, r) * 4.0 * PI / (k * k * k) * (ka.sin() - ka * ka.cos())
        } else {
            green(3, k, r) * h * h * h
        }
    }
}

fn tensor_gauss(dims: usize, k: C64, offset: &Point, h: f64, order: usize) -> C64 {
    let rule = gauss_legendre(order);
    let half = 0.5 * h;
    let mut sum = ZERO;
    if dims == 2 {
        for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
            let x = offset[0] + half * xi;
            for (xj, wj) in rule.nodes.iter().zip(&rule.weights) {
                let z = offset[1] + half * xj;
                sum += green(2, k, (x * x + z * z).sqrt()) * (wi * wj);
            }
        }
        sum * (half * half)
    } else {
        for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
            let x = offset[0] + half * xi;
            for (xj, wj) in rule.nodes.iter().zip(&rule.weights) {
                let y = offset[1] + half * xj;
                for (xl, wl) in rule.nodes.iter().zip(&rule.weights) {
                    let z = offset[2] + half * xl;
                    sum += green(3, k, (x * x + y * y + z * z).sqrt()) * (wi * wj * wl);
                }
            }
        }
        sum * (half * half * half)
    }
}

/// `int_0^r G(s) s ds` for the 2D Green's function.
fn radial_antiderivative_2d(k: C64, r: f64) -> C64 {
    -0.25 * J / (k * k) * zh2_1_regular(k * r)
}

/// `int_0^r G(s) s^2 ds` for the 3D Green's function.
fn radial_antiderivative_3d(k: C64, r: f64) -> C64 {
    let z = k * r;
    if z.norm() < 0.5 {
        // (r^2 / 4 pi) sum_{n>=2} (n-1) (-jz)^(n-2) / n!  (signs folded below)
        let mut term = C64::new(1.0, 0.0); // (-jz)^(n-2)
        let mut fact = 2.0; // n!
        let mut sum = ZERO;
        for n in 2..30 {
            let nf = n as f64;
            if n > 2 {
                term *= -J * z;
                fact *= nf;
            }
            let c = term * ((nf - 1.0) / fact);
            sum += c;
            if c.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum * (r * r / (4.0 * PI))
    } else {
        ((-J * z).exp() * (1.0 + J * z) - 1.0) / (4.0 * PI * k * k)
    }
}

/// Gauss-Legendre over `[a, b]` with panels that grow geometrically away
/// from `t = 0`, where the integrand varies on the scale `scale`.
fn graded_line<F: FnMut(f64) -> C64>(a: f64, b: f64, scale: f64, order: usize, f: &mut F) -> C64 {
    let rule = gauss_legendre(order);
    let mut sum = ZERO;
    let mut panel = |lo: f64, hi: f64, sum: &mut C64| {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            *sum += f(mid + half * x) * (w * half);
        }
    };
    let scale = scale.max(1e-12 * (b - a).abs());
    // Split into the parts on either side of the foot point.
    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(2);
    if a < 0.0 && b > 0.0 {
        pieces.push((0.0, -a));
        pieces.push((0.0, b));
    } else if b <= 0.0 {
        pieces.push((-b, -a));
    } else {
        pieces.push((a, b));
    }
    let negative_side = |i: usize| (a < 0.0 && b > 0.0 && i == 0) || b <= 0.0;
    for (i, &(lo, hi)) in pieces.iter().enumerate() {
        // Distances from the foot, lo >= 0.
        let mut start = lo;
        let mut width = scale.max(lo);
        while start < hi {
            let end = (start + width).min(hi);
            if negative_side(i) {
                panel(-end, -start, &mut sum);
            } else {
                panel(start, end, &mut sum);
            }
            start = end;
            width *= 2.0;
        }
    }
    sum
}

fn boundary_integral_2d(k: C64, c: [f64; 2], h: f64) -> C64 {
    let half = 0.5 * h;
    let mut total = ZERO;
    for axis in 0..2 {
        let other = 1 - axis;
        for sign in [1.0, -1.0] {
            let plane = c[axis] + sign * half;
            let nd = sign * plane;
            if nd == 0.0 {
                continue;
            }
            let (a, b) = (c[other] - half, c[other] + half);
            let mut f = |t: f64| {
                let r2 = plane * plane + t * t;
                radial_antiderivative_2d(k, r2.sqrt()) * (nd / r2)
            };
            total += graded_line(a, b, plane.abs(), 16, &mut f);
        }
    }
    total
}

fn boundary_integral_3d(k: C64, c: Point, h: f64) -> C64 {
    let half = 0.5 * h;
    let mut total = ZERO;
    for axis in 0..3 {
        let (u_ax, v_ax) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [1.0, -1.0] {
            let plane = c[axis] + sign * half;
            let nd = sign * plane;
            if nd == 0.0 {
                continue;
            }
            let d = plane.abs();
            let (ua, ub) = (c[u_ax] - half, c[u_ax] + half);
            let (va, vb) = (c[v_ax] - half, c[v_ax] + half);
            let mut outer = |u: f64| {
                let du2 = plane * plane + u * u;
                let mut inner = |v: f64| {
                    let r2 = du2 + v * v;
                    let r = r2.sqrt();
                    radial_antiderivative_3d(k, r) * (nd / (r2 * r))
                };
                graded_line(va, vb, du2.sqrt(), 12, &mut inner)
            };
            total += graded_line(ua, ub, d, 12, &mut outer);
        }
    }
    total
}

/// `integral over cell n of G(x - point) dx` for every cell of `grid`.
pub fn point_coupling(grid: &Grid, k: C64, point: &Point, accuracy: Accuracy) -> Vec<C64> {
    let dims = grid.dims();
    let h = grid.spacing();
    (0..grid.len())
        .map(|n| {
            let c = grid.center(n);
            let mut off = [0.0; 3];
            for q in 0..dims {
                off[q] = c[q] - point[q];
            }
            cell_integral_with(dims, k, &off, h, accuracy)
        })
        .collect()
}

/// `k0^2 sum_n (integral of G(point - x) over cell n) field[n]` at each point.
pub fn radiate(grid: &Grid, k: &BackgroundWavenumber, field: &[C64], points: &[Point]) -> Result<Vec<C64>, GreensError> {
    if field.len() != grid.len() {
        return Err(GreensError::ShapeMismatch { expected: grid.len(), got: field.len() });
    }
    let k2 = k.k_squared();
    Ok(points
        .iter()
        .map(|p| {
            let w = point_coupling(grid, k.k0, p, Accuracy::Kernel);
            k2 * w.iter().zip(field).map(|(a, b)| a * b).sum::<C64>()
        })
        .collect())
}

/// Reusable buffers for [`ConvolutionKernel::apply_into`].
#[derive(Debug, Default)]
pub struct ConvolutionWorkspace {
    padded: Vec<C64>,
    fft: FftScratch,
}

/// Cell-integrated Green's kernel on a zero-padded FFT lattice.
#[derive(Debug)]
pub struct ConvolutionKernel {
    grid: Grid,
    wavenumber: BackgroundWavenumber,
    padded: Vec<usize>,
    fft: FftNd,
    /// FFT of the kernel, pre-scaled by `k0^2 / prod(padded)`.
    spectrum: Vec<C64>,
}

impl ConvolutionKernel {
    pub fn new(grid: &Grid, wavenumber: &BackgroundWavenumber) -> Self {
        let padded: Vec<usize> = grid.shape().iter().map(|&n| smooth_size(2 * n - 1)).collect();
        Self::with_padding(grid, wavenumber, &padded).expect("minimal padding is valid")
    }

    pub fn with_padding(grid: &Grid, wavenumber: &BackgroundWavenumber, padded: &[usize]) -> Result<Self, GreensError> {
        let dims = grid.dims();
        if padded.len() != dims {
            return Err(GreensError::ShapeMismatch { expected: dims, got: padded.len() });
        }
        for (axis, (&p, &n)) in padded.iter().zip(grid.shape()).enumerate() {
            if p < 2 * n - 1 {
                return Err(GreensError::Padding { axis, got: p, min: 2 * n - 1 });
            }
        }
        let h = grid.spacing();
        let shape = grid.shape();
        let k = wavenumber.k0;

        // The kernel is even in every axis separately, so only the
        // non-negative orthant of offsets is integrated.
        let orthant: Vec<usize> = shape.to_vec();
        let orthant_len: usize = orthant.iter().product();
        let mut values = Vec::with_capacity(orthant_len);
        let mut idx = vec![0usize; dims];
        for _ in 0..orthant_len {
            let mut off = [0.0; 3];
            for q in 0..dims {
                off[q] = idx[q] as f64 * h;
            }
            values.push(cell_integral(dims, k, &off, h));
            for q in (0..dims).rev() {
                idx[q] += 1;
                if idx[q] < orthant[q] {
                    break;
                }
                idx[q] = 0;
            }
        }

        let total: usize = padded.iter().product();
        let mut lattice = vec![ZERO; total];
        let mut pstrides = vec![1usize; dims];
        for q in (0..dims - 1).rev() {
            pstrides[q] = pstrides[q + 1] * padded[q + 1];
        }
        let mut idx = vec![0usize; dims];
        for &v in &values {
            // Scatter to every sign combination of the offset.
            for mask in 0..(1usize << dims) {
                let mut pos = 0;
                let mut duplicate = false;
                for q in 0..dims {
                    let neg = mask & (1 << q) != 0;
                    if neg && idx[q] == 0 {
                        duplicate = true;
                        break;
                    }
                    let i = if neg { padded[q] - idx[q] } else { idx[q] };
                    pos += i * pstrides[q];
                }
                if !duplicate {
                    lattice[pos] = v;
                }
            }
            for q in (0..dims).rev() {
                idx[q] += 1;
                if idx[q] < orthant[q] {
                    break;
                }
                idx[q] = 0;
            }
        }

        let fft = FftNd::new(padded);
        let mut scratch = FftScratch::default();
        fft.forward(&mut lattice, padded, &mut scratch);
        let scale = wavenumber.k_squared() / total as f64;
        lattice.iter_mut().for_each(|v| *v *= scale);
        Ok(Self { grid: grid.clone(), wavenumber: *wavenumber, padded: padded.to_vec(), fft, spectrum: lattice })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumber(&self) -> &BackgroundWavenumber {
        &self.wavenumber
    }

    pub fn padded_shape(&self) -> &[usize] {
        &self.padded
    }

    pub fn spectrum(&self) -> &[C64] {
        &self.spectrum
    }

    pub fn apply(&self, field: &[C64]) -> Result<Vec<C64>, GreensError> {
        let mut out = vec![ZERO; self.grid.len()];
        self.apply_into(field, &mut out, &mut ConvolutionWorkspace::default())?;
        Ok(out)
    }

    /// `out = k0^2 (K * field)` on the grid.
    pub fn apply_into(&self, field: &[C64], out: &mut [C64], ws: &mut ConvolutionWorkspace) -> Result<(), GreensError> {
        let n = self.grid.len();
        if field.len() != n || out.len() != n {
            return Err(GreensError::ShapeMismatch { expected: n, got: field.len().min(out.len()) });
        }
        let total = self.spectrum.len();
        ws.padded.clear();
        ws.padded.resize(total, ZERO);
        let shape = self.grid.shape();
        let dims = shape.len();
        let row = shape[dims - 1];
        let prow = self.padded[dims - 1];
        let rows = n / row;
        for r in 0..rows {
            let dst = self.padded_row_offset(r);
            ws.padded[dst..dst + row].copy_from_slice(&field[r * row..(r + 1) * row]);
        }
        self.fft.forward(&mut ws.padded, shape, &mut ws.fft);
        for (v, s) in ws.padded.iter_mut().zip(&self.spectrum) {
            *v *= s;
        }
        self.fft.inverse(&mut ws.padded, shape, &mut ws.fft);
        for r in 0..rows {
            let src = self.padded_row_offset(r);
            out[r * row..(r + 1) * row].copy_from_slice(&ws.padded[src..src + row]);
        }
        debug_assert!(prow >= row);
        Ok(())
    }

    /// Start of grid row `r` (rows run along the last axis) in the padded
    /// lattice.
    fn padded_row_offset(&self, mut r: usize) -> usize {
        let shape = self.grid.shape();
        let dims = shape.len();
        let mut offset = 0;
        let mut stride = self.padded[dims - 1];
        for q in (0..dims - 1).rev() {
            let i = r % shape[q];
            r /= shape[q];
            offset += i * stride;
            stride *= self.padded[q];
        }
        offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_l2(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn wavenumber_for_kh(kh: f64, h: f64, alpha: f64) -> BackgroundWavenumber {
        let bg = Background { c0: 1540.0, alpha0: alpha, rho0: 1000.0 };
        let f = kh * 1540.0 / (2.0 * PI * h);
        BackgroundWavenumber::new(f, &bg).unwrap()
    }

    /// Composite Gauss-Legendre over a graded split of the cell; the self
    /// cell uses Duffy triangles, which cancel the logarithmic singularity.
    fn quadrature_oracle_2d(k: C64, off: [f64; 2], h: f64) -> C64 {
        let rule = gauss_legendre(20);
        let g = |x: f64, z: f64| green(2, k, (x * x + z * z).sqrt());
        if off[0] == 0.0 && off[1] == 0.0 {
            // Four triangles with apex at the singular point, each mapped
            // from the unit square with Jacobian u.
            let half = 0.5 * h;
            let corners = [[half, -half], [half, half], [-half, half], [-half, -half], [half, -half]];
            let mut sum = ZERO;
            for t in 0..4 {
                let (p, q) = (corners[t], corners[t + 1]);
                let area2 = (p[0] * q[1] - p[1] * q[0]).abs();
                // u panels graded toward the apex.
                let mut edges = vec![0.0];
                let mut e = 1e-8;
                while e < 1.0 {
                    edges.push(e);
                    e *= 4.0;
                }
                edges.push(1.0);
                for w in edges.windows(2) {
                    let (ua, ub) = (w[0], w[1]);
                    for (xu, wu) in rule.nodes.iter().zip(&rule.weights) {
                        let u = 0.5 * (ua + ub) + 0.5 * (ub - ua) * xu;
                        for (xv, wv) in rule.nodes.iter().zip(&rule.weights) {
                            let v = 0.5 + 0.5 * xv;
                            let x = u * (p[0] + v * (q[0] - p[0]));
                            let z = u * (p[1] + v * (q[1] - p[1]));
                            sum += g(x, z) * (u * area2 * wu * wv * 0.25 * (ub - ua));
                        }
                    }
                }
            }
            sum
        } else {
            let split = 8;
            let sub = h / split as f64;
            let mut sum = ZERO;
            for a in 0..split {
                for b in 0..split {
                    let cx = off[0] - 0.5 * h + (a as f64 + 0.5) * sub;
                    let cz = off[1] - 0.5 * h + (b as f64 + 0.5) * sub;
                    for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
                        for (xj, wj) in rule.nodes.iter().zip(&rule.weights) {
                            sum += g(cx + 0.5 * sub * xi, cz + 0.5 * sub * xj) * (wi * wj);
                        }
                    }
                }
            }
            sum * (0.25 * sub * sub)
        }
    }

    #[test]
    fn wavenumber_branch() {
        let bg = Background { c0: 1540.0, alpha0: 5.7565e-6, rho0: 1000.0 };
        let k = BackgroundWavenumber::new(1e6, &bg).unwrap();
        assert!(k.k0.re > 0.0 && k.k0.im < 0.0);
        assert_relative_eq!(k.k0.re, 2.0 * PI * 1e6 / 1540.0, max_relative = 1e-6);
        let lossless = BackgroundWavenumber::new(1e6, &Background::default()).unwrap();
        assert_eq!(lossless.k0.im, 0.0);
        assert!(BackgroundWavenumber::new(0.0, &bg).is_err());
    }

    #[test]
    fn kernel_entries_match_quadrature_oracle() {
        let h = 1e-4;
        let k = wavenumber_for_kh(0.5, h, 0.0).k0;
        let mut worst: f64 = 0.0;
        for i in 0..16 {
            for j in 0..16 {
                let off = [i as f64 * h, j as f64 * h, 0.0];
                let got = cell_integral(2, k, &off, h);
                let want = quadrature_oracle_2d(k, [off[0], off[1]], h);
                worst = worst.max((got - want).norm() / want.norm());
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst:e}");
    }

    #[test]
    fn kernel_3d_self_cell_matches_pyramid_quadrature() {
        let h = 1e-4;
        let k = wavenumber_for_kh(0.8, h, 1e-5).k0;
        // Six pyramids with apex at the centre; radial coordinate u carries
        // the u^2 Jacobian that cancels the 1/r singularity.
        let rule = gauss_legendre(16);
        let half = 0.5 * h;
        let mut want = ZERO;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                for (xa, wa) in rule.nodes.iter().zip(&rule.weights) {
                    for (xb, wb) in rule.nodes.iter().zip(&rule.weights) {
                        let mut p = [0.0; 3];
                        p[axis] = sign * half;
                        p[(axis + 1) % 3] = half * xa;
                        p[(axis + 2) % 3] = half * xb;
                        let rp = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                        for (xu, wu) in rule.nodes.iter().zip(&rule.weights) {
                            let u = 0.5 + 0.5 * xu;
                            // dV = u^2 * half * dA_face * du
                            want += green(3, k, u * rp) * (u * u * half * half * half * wa * wb * 0.5 * wu);
                        }
                    }
                }
            }
        }
        let got = cell_integral(3, k, &[0.0; 3], h);
        assert!((got - want).norm() / want.norm() < 1e-9, "{got} vs {want}");
        let near = cell_integral(3, k, &[h, 2.0 * h, 0.0], h);
        let far_rule = tensor_gauss(3, k, &[h, 2.0 * h, 0.0], h, 12);
        assert!((near - far_rule).norm() / far_rule.norm() < 1e-9);
    }

    #[test]
    fn kernel_is_even() {
        let h = 2e-4;
        let k = wavenumber_for_kh(0.7, h, 1e-5).k0;
        for off in [[h, 0.0, 0.0], [2.0 * h, -h, 0.0], [3.0 * h, 5.0 * h, 0.0]] {
            let neg = [-off[0], -off[1], 0.0];
            assert_eq!(cell_integral(2, k, &off, h), cell_integral(2, k, &neg, h));
        }
        for off in [[h, 2.0 * h, -h], [4.0 * h, 0.0, 3.0 * h]] {
            let neg = [-off[0], -off[1], -off[2]];
            let (a, b) = (cell_integral(3, k, &off, h), cell_integral(3, k, &neg, h));
            assert!((a - b).norm() <= 1e-14 * a.norm());
        }
    }

    #[test]
    fn lossy_kernel_row_decays() {
        let grid = Grid::centered(&[24, 24], 1e-4, 1e-3).unwrap();
        let bg = Background { c0: 1540.0, alpha0: 8e-5, rho0: 1000.0 };
        let k = BackgroundWavenumber::new(3e6, &bg).unwrap();
        assert!(k.k0.im < 0.0);
        let mags: Vec<f64> = (3..24).map(|i| cell_integral(2, k.k0, &[i as f64 * grid.spacing(), 0.0, 0.0], grid.spacing()).norm()).collect();
        assert!(mags.windows(2).all(|w| w[1] < w[0]), "{mags:?}");
    }

    fn dense_apply(grid: &Grid, k: &BackgroundWavenumber, f: &[C64]) -> Vec<C64> {
        let h = grid.spacing();
        let dims = grid.dims();
        let k2 = k.k_squared();
        (0..grid.len())
            .map(|n| {
                let cn = grid.center(n);
                let mut acc = ZERO;
                for (m, fm) in f.iter().enumerate() {
                    let cm = grid.center(m);
                    let mut off = [0.0; 3];
                    for q in 0..dims {
                        off[q] = cm[q] - cn[q];
                    }
                    acc += cell_integral(dims, k.k0, &off, h) * fm;
                }
                k2 * acc
            })
            .collect()
    }

    #[test]
    fn fft_apply_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = Grid::centered(&[24, 24], 1e-4, 2e-3).unwrap();
        let k = wavenumber_for_kh(0.6, 1e-4, 0.0);
        let kernel = ConvolutionKernel::new(&grid, &k);
        let f = random_field(grid.len(), &mut rng);
        let fast = kernel.apply(&f).unwrap();
        let err = rel_l2(&fast, &dense_apply(&grid, &k, &f));
        assert!(err <= 1e-12, "{err:e}");

        let grid3 = Grid::centered(&[5, 4, 6], 1e-4, 2e-3).unwrap();
        let k3 = wavenumber_for_kh(0.6, 1e-4, 1e-5);
        let kernel3 = ConvolutionKernel::new(&grid3, &k3);
        let f3 = random_field(grid3.len(), &mut rng);
        assert!(rel_l2(&kernel3.apply(&f3).unwrap(), &dense_apply(&grid3, &k3, &f3)) <= 1e-12);
    }

    #[test]
    fn apply_is_linear_and_zero_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = Grid::centered(&[12, 10], 1e-4, 1e-3).unwrap();
        let kernel = ConvolutionKernel::new(&grid, &wavenumber_for_kh(0.4, 1e-4, 0.0));
        let zero = kernel.apply(&vec![ZERO; grid.len()]).unwrap();
        assert!(zero.iter().all(|v| *v == ZERO));
        let f = random_field(grid.len(), &mut rng);
        let g = random_field(grid.len(), &mut rng);
        let (a, b) = (C64::new(0.3, -1.2), C64::new(-0.7, 0.4));
        let combo: Vec<C64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = kernel.apply(&combo).unwrap();
        let (af, ag) = (kernel.apply(&f).unwrap(), kernel.apply(&g).unwrap());
        let rhs: Vec<C64> = af.iter().zip(&ag).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_l2(&lhs, &rhs) <= 1e-12);
        assert!(kernel.apply(&f[1..]).is_err());
    }

    #[test]
    fn apply_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = Grid::centered(&[16, 16], 1e-4, 1e-3).unwrap();
        let kernel = ConvolutionKernel::new(&grid, &wavenumber_for_kh(0.5, 1e-4, 0.0));
        // Support away from the far edge so the shifted copy stays inside.
        let mut f = vec![ZERO; grid.len()];
        for i in 0..15 {
            for j in 0..16 {
                f[i * 16 + j] = random_field(1, &mut rng)[0];
            }
        }
        let mut shifted = vec![ZERO; grid.len()];
        for i in 0..15 {
            for j in 0..16 {
                shifted[(i + 1) * 16 + j] = f[i * 16 + j];
            }
        }
        let (a, b) = (kernel.apply(&f).unwrap(), kernel.apply(&shifted).unwrap());
        for i in 0..15 {
            for j in 0..16 {
                let (x, y) = (a[i * 16 + j], b[(i + 1) * 16 + j]);
                assert!((x - y).norm() <= 1e-12 * x.norm().max(1e-30));
            }
        }
    }

    #[test]
    fn extra_padding_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::centered(&[10, 14], 1e-4, 1e-3).unwrap();
        let k = wavenumber_for_kh(0.5, 1e-4, 1e-5);
        let tight = ConvolutionKernel::new(&grid, &k);
        assert!(tight.padded_shape().iter().zip(grid.shape()).all(|(p, n)| *p >= 2 * n - 1));
        let loose = ConvolutionKernel::with_padding(&grid, &k, &[40, 54]).unwrap();
        let f = random_field(grid.len(), &mut rng);
        assert!(rel_l2(&tight.apply(&f).unwrap(), &loose.apply(&f).unwrap()) <= 1e-14);
        assert!(ConvolutionKernel::with_padding(&grid, &k, &[18, 27]).is_err());
    }

    #[test]
    fn radiate_matches_point_source_far_away() {
        let h = 1e-4;
        let grid = Grid::new(&[1, 1], h, &[0.0, 0.0]).unwrap();
        let k = wavenumber_for_kh(0.1, h, 0.0);
        for dist in [20.0 * h, 60.0 * h] {
            let p = [0.6 * dist, -0.8 * dist, 0.0];
            let got = radiate(&grid, &k, &[C64::new(1.0, 0.0)], &[p]).unwrap()[0];
            let want = k.k_squared() * h * h * green(2, k.k0, dist);
            assert!((got - want).norm() / want.norm() < 1e-3);
        }
        let g3 = Grid::new(&[1, 1, 1], h, &[0.0; 3]).unwrap();
        let p = [0.0, 0.0, -25.0 * h];
        let got = radiate(&g3, &k, &[C64::new(1.0, 0.0)], &[p]).unwrap()[0];
        let want = k.k_squared() * h * h * h * green(3, k.k0, 25.0 * h);
        assert!((got - want).norm() / want.norm() < 1e-3);
    }

    #[test]
    fn radiate_matches_dense_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let grid = Grid::centered(&[16, 16], 1e-4, 1e-3).unwrap();
        let k = wavenumber_for_kh(0.5, 1e-4, 1e-5);
        let f = random_field(grid.len(), &mut rng);
        let points: Vec<Point> = (0..8).map(|e| [(e as f64 - 3.5) * 3e-4, 0.0, 0.0]).collect();
        let got = radiate(&grid, &k, &f, &points).unwrap();
        let want: Vec<C64> = points
            .iter()
            .map(|p| {
                let mut acc = ZERO;
                for (n, fn_) in f.iter().enumerate() {
                    let c = grid.center(n);
                    acc += cell_integral(2, k.k0, &[c[0] - p[0], c[1] - p[1], 0.0], 1e-4) * fn_;
                }
                k.k_squared() * acc
            })
            .collect();
        assert!(rel_l2(&got, &want) <= 1e-12);
        assert!(radiate(&grid, &k, &vec![ZERO; grid.len()], &points).unwrap().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn equal_measure_rule_differs_from_exact_cell_integral() {
        // Quantifies the classical disk/sphere approximation against the
        // exact cell integral at ten and five cells per wavelength.
        let h = 1e-4;
        for kh in [2.0 * PI / 10.0, 2.0 * PI / 5.0] {
            let k = wavenumber_for_kh(kh, h, 0.0).k0;
            let self_exact = cell_integral(2, k, &[0.0; 3], h);
            let self_disk = cell_integral_equal_measure(2, k, &[0.0; 3], h);
            let rel_self = (self_exact - self_disk).norm() / self_exact.norm();
            let near_exact = cell_integral(2, k, &[h, 0.0, 0.0], h);
            let near_disk = cell_integral_equal_measure(2, k, &[h, 0.0, 0.0], h);
            let rel_near = (near_exact - near_disk).norm() / near_exact.norm();
            assert!(rel_self > 1e-4 && rel_self < 5e-2, "self {rel_self:e}");
            assert!(rel_near > 1e-5 && rel_near < 5e-2, "near {rel_near:e}");

            let s3 = cell_integral(3, k, &[0.0; 3], h);
            let d3 = cell_integral_equal_measure(3, k, &[0.0; 3], h);
            assert!((s3 - d3).norm() / s3.norm() < 5e-2);
        }
    }

    #[test]
    fn radial_series_matches_closed_form() {
        let k = C64::new(5000.0, -2.0);
        for r in [0.9e-4, 0.99e-4] {
            let z = k * r;
            assert!(z.norm() < 0.5);
            let closed = ((-J * z).exp() * (1.0 + J * z) - 1.0) / (4.0 * PI * k * k);
            let series = radial_antiderivative_3d(k, r);
            assert!((closed - series).norm() / series.norm() < 1e-9);
        }
    }
}
