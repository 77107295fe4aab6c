//! Cylindrical Bessel and Hankel functions for complex argument.
//!
//! Only what the 2D Green's function and the cylinder series need: orders
//! 0 and 1 for arbitrary complex `z` with `Re z > 0`, plus integer-order
//! sequences. Three evaluation regimes are used:
//!
//! * ascending power series for `|z| <= 8`,
//! * Miller backward recurrence with Neumann sums for `8 < |z| <= 25`,
//! * Hankel's asymptotic expansion for `|z| > 25`.
//!
//! The backward recurrence is normalized with `J0 + 2 sum J_2k = 1`, which
//! stays well conditioned as long as `|Im z|` is moderate (lossy tissue
//! backgrounds give `|Im z| / |z|` of order 1e-3).

use num_complex::Complex64 as C64;
use std::f64::consts::{FRAC_2_PI, FRAC_PI_2, FRAC_PI_4, PI};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_LIMIT: f64 = 8.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

const J: C64 = C64 { re: 0.0, im: 1.0 };

/// `J0, J1, Y0, Y1` evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselJY01 {
    pub j0: C64,
    pub j1: C64,
    pub y0: C64,
    pub y1: C64,
}

impl BesselJY01 {
    /// `H0^(2) = J0 - jY0`.
    pub fn h2_0(&self) -> C64 {
        self.j0 - J * self.y0
    }

    /// `H1^(2) = J1 - jY1`.
    pub fn h2_1(&self) -> C64 {
        self.j1 - J * self.y1
    }
}

/// Bessel functions of the first and second kind, orders 0 and 1.
pub fn bessel_jy01(z: C64) -> BesselJY01 {
    let r = z.norm();
    if r <= SERIES_LIMIT {
        series_jy01(z)
    } else if r <= ASYMPTOTIC_LIMIT {
        miller_jy01(z)
    } else {
        let (h1_0, h1_1) = asymptotic_hankel(z, 1.0);
        let (h2_0, h2_1) = asymptotic_hankel(z, -1.0);
        let half = C64::new(0.5, 0.0);
        BesselJY01 {
            j0: (h1_0 + h2_0) * half,
            j1: (h1_1 + h2_1) * half,
            y0: (h1_0 - h2_0) / (J * 2.0),
            y1: (h1_1 - h2_1) / (J * 2.0),
        }
    }
}

/// Hankel functions of the second kind `(H0^(2)(z), H1^(2)(z))`.
pub fn hankel2_01(z: C64) -> (C64, C64) {
    if z.norm() > ASYMPTOTIC_LIMIT {
        asymptotic_hankel(z, -1.0)
    } else {
        let b = bessel_jy01(z);
        (b.h2_0(), b.h2_1())
    }
}

/// `z H1^(2)(z) - 2j/pi`, evaluated without the cancellation that the
/// direct form suffers for small `|z|`. Vanishes like `z^2 log z` at the
/// origin; it is the radial antiderivative of `z H0^(2)(z)`.
pub fn zh2_1_regular(z: C64) -> C64 {
    if z.norm() <= 2.0 {
        let (j1_sum, y1_reg) = series_j1_zy1_regular(z);
        z * j1_sum - J * y1_reg
    } else {
        let (_, h1) = hankel2_01(z);
        z * h1 - J * FRAC_2_PI
    }
}

/// `J_0(z) ..= J_nmax(z)` by normalized backward recurrence.
pub fn bessel_j_seq(z: C64, nmax: usize) -> Vec<C64> {
    if z == C64::new(0.0, 0.0) {
        let mut out = vec![C64::new(0.0, 0.0); nmax + 1];
        out[0] = C64::new(1.0, 0.0);
        return out;
    }
    let mut out = miller_sequence(z, nmax.max(1));
    out.truncate(nmax + 1);
    out
}

/// `Y_0(z) ..= Y_nmax(z)` by upward recurrence from `Y0, Y1` (stable for Y).
pub fn bessel_y_seq(z: C64, nmax: usize) -> Vec<C64> {
    let b = bessel_jy01(z);
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(b.y0);
    if nmax >= 1 {
        out.push(b.y1);
    }
    for n in 1..nmax {
        let next = out[n] * (2.0 * n as f64) / z - out[n - 1];
        out.push(next);
    }
    out
}

/// `H^(2)_0(z) ..= H^(2)_nmax(z)`.
pub fn hankel2_seq(z: C64, nmax: usize) -> Vec<C64> {
    let js = bessel_j_seq(z, nmax);
    let ys = bessel_y_seq(z, nmax);
    js.iter().zip(&ys).map(|(&j, &y)| j - J * y).collect()
}

fn series_jy01(z: C64) -> BesselJY01 {
    let q = z * z * 0.25;
    let lg = (z * 0.5).ln() + EULER_GAMMA;

    // J0 and the harmonic-number sum of Y0 share the same term sequence.
    let mut term = C64::new(1.0, 0.0);
    let mut j0 = term;
    let mut y0_tail = C64::new(0.0, 0.0);
    let mut harmonic = 0.0;
    for k in 1..80 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        harmonic += 1.0 / kf;
        j0 += term;
        // (-1)^(k+1) H_k q^k/(k!)^2 == -H_k * term
        y0_tail -= term * harmonic;
        if term.norm() * (1.0 + harmonic) < 1e-17 * j0.norm().max(1e-300) {
            break;
        }
    }
    let y0 = FRAC_2_PI * (lg * j0 + y0_tail);

    let (j1_sum, zy1_reg) = series_j1_zy1_regular(z);
    let j1 = j1_sum;
    let y1 = (zy1_reg - FRAC_2_PI) / z;
    BesselJY01 { j0, j1, y0, y1 }
}

/// Returns `(J1(z), z Y1(z) + 2/pi)` from the ascending series.
fn series_j1_zy1_regular(z: C64) -> (C64, C64) {
    let q = z * z * 0.25;
    let half_z = z * 0.5;
    // term_k = (-q)^k / (k! (k+1)!)
    let mut term = C64::new(1.0, 0.0);
    let mut j_sum = term;
    // psi(k+1) + psi(k+2) = -2 gamma + H_k + H_{k+1}
    let mut h_k = 0.0;
    let mut h_k1 = 1.0;
    let mut psi_sum = term * (-2.0 * EULER_GAMMA + h_k + h_k1);
    for k in 1..80 {
        let kf = k as f64;
        term *= -q / (kf * (kf + 1.0));
        h_k += 1.0 / kf;
        h_k1 += 1.0 / (kf + 1.0);
        j_sum += term;
        let contrib = term * (-2.0 * EULER_GAMMA + h_k + h_k1);
        psi_sum += contrib;
        if contrib.norm() < 1e-18 * psi_sum.norm().max(1e-300) && term.norm() < 1e-18 {
            break;
        }
    }
    let j1 = half_z * j_sum;
    // z Y1 + 2/pi = (2/pi) z ln(z/2) J1 - (1/pi) z (z/2) sum
    let zy1_reg = FRAC_2_PI * z * half_z.ln() * j1 - z * half_z * psi_sum / PI;
    (j1, zy1_reg)
}

/// Normalized `J_0..=J_top` with `top >= nmax`, computed by backward
/// recurrence from well above both `|z|` and `nmax`.
fn miller_sequence(z: C64, nmax: usize) -> Vec<C64> {
    let r = z.norm();
    let mut start = (r.ceil() as usize).max(nmax) + 30 + (4.0 * r.sqrt()) as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut vals = vec![C64::new(0.0, 0.0); start + 2];
    vals[start] = C64::new(1e-30, 0.0);
    for n in (1..=start).rev() {
        let prev = vals[n] * (2.0 * n as f64) / z - vals[n + 1];
        vals[n - 1] = prev;
        if prev.norm() > 1e100 {
            for v in vals[n - 1..].iter_mut() {
                *v *= 1e-100;
            }
        }
    }
    let mut norm = vals[0];
    for k in (2..=start).step_by(2) {
        norm += vals[k] * 2.0;
    }
    // Divide through a unit-modulus factor; complex division squares the
    // divisor's modulus internally and would overflow.
    let scale = 1.0 / norm.norm();
    let unit = norm * scale;
    for v in vals.iter_mut() {
        *v = (*v * scale) / unit;
    }
    vals.truncate(start + 1);
    vals
}

fn miller_jy01(z: C64) -> BesselJY01 {
    let js = miller_sequence(z, 2);
    let lg = (z * 0.5).ln() + EULER_GAMMA;
    let mut y0_sum = C64::new(0.0, 0.0);
    let mut y1_sum = C64::new(0.0, 0.0);
    let mut k = 1;
    while 2 * k + 1 < js.len() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let kf = k as f64;
        y0_sum += js[2 * k] * (sign / kf);
        y1_sum += (js[2 * k - 1] - js[2 * k + 1]) * (sign / kf);
        k += 1;
    }
    let y0 = FRAC_2_PI * lg * js[0] - 2.0 * FRAC_2_PI * y0_sum;
    let y1 = -FRAC_2_PI * js[0] / z + FRAC_2_PI * lg * js[1] + FRAC_2_PI * y1_sum;
    BesselJY01 { j0: js[0], j1: js[1], y0, y1 }
}

/// Hankel's expansion for orders 0 and 1. `kind = +1` gives `H^(1)`,
/// `kind = -1` gives `H^(2)`.
fn asymptotic_hankel(z: C64, kind: f64) -> (C64, C64) {
    let phase_unit = C64::new(0.0, kind);
    let pref = (C64::new(FRAC_2_PI, 0.0) / z).sqrt();
    let series = |order: f64| -> C64 {
        let mu = 4.0 * order * order;
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        let mut last = f64::INFINITY;
        for k in 1..60 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            term *= phase_unit * ((mu - odd * odd) / (kf * 8.0)) / z;
            let mag = term.norm();
            if mag > last {
                break;
            }
            sum += term;
            last = mag;
            if mag < 1e-17 {
                break;
            }
        }
        sum
    };
    let omega0 = z - FRAC_PI_4;
    let omega1 = z - FRAC_PI_2 - FRAC_PI_4;
    let h0 = pref * (phase_unit * omega0).exp() * series(0.0);
    let h1 = pref * (phase_unit * omega1).exp() * series(1.0);
    (h0, h1)
}
