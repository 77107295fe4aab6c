//! Reference computations used to validate the fast operators: explicit
//! Green's-matrix sums and the partial-wave series of a penetrable cylinder.

use crate::greens::{cell_integral, BackgroundWavenumber};
use crate::medium::{contrast_from_medium, AcousticMedium, Background, ContrastMap, Grid, Point};
use crate::special::{bessel_j_seq, hankel2_seq};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const J: C64 = C64 { re: 0.0, im: 1.0 };

/// `k^2 sum_m G_cell(x_n - x_m) f_m` by explicit double sum.
pub fn dense_apply(grid: &Grid, k: &BackgroundWavenumber, f: &[C64]) -> Vec<C64> {
    let centers: Vec<Point> = (0..grid.len()).map(|n| grid.center(n)).collect();
    centers.iter().map(|&p| dense_point(grid, k, f, &centers, p)).collect()
}

/// `k^2 sum_m G_cell(p - x_m) f_m` at each point.
pub fn dense_radiate(grid: &Grid, k: &BackgroundWavenumber, f: &[C64], points: &[Point]) -> Vec<C64> {
    let centers: Vec<Point> = (0..grid.len()).map(|n| grid.center(n)).collect();
    points.iter().map(|&p| dense_point(grid, k, f, &centers, p)).collect()
}

fn dense_point(grid: &Grid, k: &BackgroundWavenumber, f: &[C64], centers: &[Point], p: Point) -> C64 {
    let dims = grid.dims();
    let mut acc = ZERO;
    for (c, fm) in centers.iter().zip(f) {
        let mut off = [0.0; 3];
        for q in 0..dims {
            off[q] = c[q] - p[q];
        }
        acc += cell_integral(dims, k.k0, &off, grid.spacing()) * fm;
    }
    k.k_squared() * acc
}

/// Total field of the unit plane wave `exp(-j k0 z)` scattered by a
/// penetrable cylinder of radius `a` (wavenumber `k1` inside) centred at the
/// origin, at `(x, z)`. Constant density.
pub fn cylinder_total_field(k0: f64, k1: f64, a: f64, x: f64, z: f64) -> C64 {
    let r = (x * x + z * z).sqrt();
    let cos_phi = if r > 0.0 { z / r } else { 1.0 };
    let phi = cos_phi.clamp(-1.0, 1.0).acos();
    let nmax = (k1.max(k0) * a.max(r)) as usize + 30;
    let c = |v: f64| C64::new(v, 0.0);
    let j0a = bessel_j_seq(c(k0 * a), nmax + 1);
    let j1a = bessel_j_seq(c(k1 * a), nmax + 1);
    let h0a = hankel2_seq(c(k0 * a), nmax + 1);
    let deriv = |seq: &[C64], n: usize, x: f64| -> C64 {
        if n == 0 {
            -seq[1]
        } else {
            seq[n - 1] - seq[n] * (n as f64 / x)
        }
    };
    let inside = r < a;
    let jr = if inside { bessel_j_seq(c(k1 * r), nmax + 1) } else { bessel_j_seq(c(k0 * r), nmax + 1) };
    let hr = if inside { Vec::new() } else { hankel2_seq(c(k0 * r.max(1e-300)), nmax + 1) };
    let mut total = ZERO;
    for n in 0..=nmax {
        let eps = if n == 0 { 1.0 } else { 2.0 };
        let phase = (-J).powu(n as u32) * eps * (n as f64 * phi).cos();
        let den = k0 * j1a[n] * deriv(&h0a, n, k0 * a) - k1 * deriv(&j1a, n, k1 * a) * h0a[n];
        let an = (-2.0 * J / (PI * a)) / den;
        if inside {
            total += phase * an * jr[n];
        } else {
            let bn = (an * j1a[n] - j0a[n]) / h0a[n];
            total += phase * (jr[n] + bn * hr[n]);
        }
    }
    total
}

/// Cylinder contrast on `grid`, partial-volume averaged from an
/// `oversample`-times finer rasterization.
pub fn cylinder_contrast(grid: &Grid, radius: f64, center: [f64; 2], c_in: f64, background: &Background, oversample: usize) -> ContrastMap {
    let fine = grid.refine(oversample);
    let mut med = AcousticMedium::homogeneous(fine.clone(), *background);
    for n in 0..fine.len() {
        let p = fine.center(n);
        if (p[0] - center[0]).hypot(p[1] - center[1]) < radius {
            med.sos[n] = c_in;
        }
    }
    contrast_from_medium(&med, grid).expect("cylinder contrast on a valid grid")
}

/// `|a - b| / |b|`.
pub fn rel_l2(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}
