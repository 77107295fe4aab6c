//! Grids, acoustic media and the mapping between (speed of sound,
//! attenuation) and complex compressibility contrast.
//!
//! Time convention throughout the crate is `exp(+j omega t)`: a lossy
//! medium has compressibility `kappa' - j kappa''` with `kappa'' >= 0`, and
//! outgoing waves are `H0^(2)` in 2D and `exp(-j k r) / (4 pi r)` in 3D.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_10, PI};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("grid must be 2D or 3D, got {0} axes")]
    BadDims(usize),
    #[error("grid spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("grid axis {axis} has zero cells")]
    EmptyAxis { axis: usize },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("{what} must be non-negative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("grids do not cover the same extent with an integer refinement")]
    ExtentMismatch,
    #[error("{expected} values expected, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{} cells have non-positive real compressibility (first: {:?})", cells.len(), cells.first())]
    NonPhysical { cells: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, MediumError>;

/// A physical coordinate, one entry per grid axis (unused entries are 0).
/// The last grid axis is depth.
pub type Point = [f64; 3];

/// Uniform cell-centred grid. Cell `n` is the axis-aligned box of side
/// `spacing` centred at [`Grid::center`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
}

impl Grid {
    /// `origin` is the centre of cell `(0, .., 0)`.
    pub fn new(shape: &[usize], spacing: f64, origin: &[f64]) -> Result<Self> {
        let d = shape.len();
        if !(2..=3).contains(&d) || origin.len() != d {
            return Err(MediumError::BadDims(d));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(MediumError::BadSpacing(spacing));
        }
        if let Some(axis) = shape.iter().position(|&n| n == 0) {
            return Err(MediumError::EmptyAxis { axis });
        }
        Ok(Self { shape: shape.to_vec(), spacing, origin: origin.to_vec() })
    }

    /// Grid whose cells are centred on the lateral axes (symmetric about 0)
    /// and whose first depth row starts `depth_start` below the origin plane.
    pub fn centered(shape: &[usize], spacing: f64, depth_start: f64) -> Result<Self> {
        let d = shape.len();
        let mut origin = vec![0.0; d];
        for (q, o) in origin.iter_mut().enumerate().take(d.saturating_sub(1)) {
            *o = -0.5 * (shape[q] as f64 - 1.0) * spacing;
        }
        if d > 0 {
            origin[d - 1] = depth_start + 0.5 * spacing;
        }
        Self::new(shape, spacing, &origin)
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell area (2D) or volume (3D).
    pub fn cell_measure(&self) -> f64 {
        self.spacing.powi(self.dims() as i32)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims()];
        for q in (0..self.dims().saturating_sub(1)).rev() {
            s[q] = s[q + 1] * self.shape[q + 1];
        }
        s
    }

    pub fn unravel(&self, mut n: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for q in (0..self.dims()).rev() {
            idx[q] = n % self.shape[q];
            n /= self.shape[q];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn center(&self, n: usize) -> Point {
        let idx = self.unravel(n);
        let mut p = [0.0; 3];
        for q in 0..self.dims() {
            p[q] = self.origin[q] + idx[q] as f64 * self.spacing;
        }
        p
    }

    /// Lower and upper physical bounds of the covered box, per axis.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for q in 0..self.dims() {
            lo[q] = self.origin[q] - 0.5 * self.spacing;
            hi[q] = lo[q] + self.shape[q] as f64 * self.spacing;
        }
        (lo, hi)
    }

    /// Grid covering the same box with `factor` times more cells per axis.
    pub fn refine(&self, factor: usize) -> Grid {
        let f = factor.max(1);
        let h = self.spacing / f as f64;
        let origin: Vec<f64> = self.origin.iter().map(|o| o - 0.5 * self.spacing + 0.5 * h).collect();
        let shape: Vec<usize> = self.shape.iter().map(|n| n * f).collect();
        Grid { shape, spacing: h, origin }
    }

    /// Integer factor `r` such that `fine == self.refine(r)`, if any.
    pub fn refinement_to(&self, fine: &Grid) -> Option<usize> {
        if fine.dims() != self.dims() {
            return None;
        }
        let ratio = self.spacing / fine.spacing;
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
            return None;
        }
        let candidate = self.refine(r as usize);
        let tol = 1e-9 * self.spacing;
        let same = candidate.shape == fine.shape
            && candidate.origin.iter().zip(&fine.origin).all(|(a, b)| (a - b).abs() <= tol);
        same.then_some(r as usize)
    }
}

/// Homogeneous background parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Speed of sound, m/s.
    pub c0: f64,
    /// Attenuation, Np/m/Hz.
    pub alpha0: f64,
    /// Density, kg/m^3.
    pub rho0: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self { c0: 1540.0, alpha0: 0.0, rho0: 1000.0 }
    }
}

impl Background {
    pub fn compressibility(&self) -> Result<C64> {
        compressibility(self.c0, self.alpha0, self.rho0)
    }
}

/// Per-cell speed of sound (m/s) and attenuation (Np/m/Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticMedium {
    pub grid: Grid,
    pub sos: Vec<f64>,
    pub atten: Vec<f64>,
    pub background: Background,
}

impl AcousticMedium {
    pub fn homogeneous(grid: Grid, background: Background) -> Self {
        let n = grid.len();
        Self { grid, sos: vec![background.c0; n], atten: vec![background.alpha0; n], background }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        for len in [self.sos.len(), self.atten.len()] {
            if len != n {
                return Err(MediumError::LengthMismatch { expected: n, got: len });
            }
        }
        if let Some(&c) = self.sos.iter().find(|&&c| !(c > 0.0)) {
            return Err(MediumError::NonPositive { what: "speed of sound", value: c });
        }
        if let Some(&a) = self.atten.iter().find(|&&a| !(a >= 0.0)) {
            return Err(MediumError::Negative { what: "attenuation", value: a });
        }
        if !(self.background.rho0 > 0.0) {
            return Err(MediumError::NonPositive { what: "density", value: self.background.rho0 });
        }
        Ok(())
    }
}

/// Complex contrast `kappa / kappa0 - 1` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMap {
    pub grid: Grid,
    pub values: Vec<C64>,
}

impl ContrastMap {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn new(grid: Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MediumError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn is_background(&self) -> bool {
        self.values.iter().all(|v| *v == C64::new(0.0, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttenDirection {
    /// dB/cm/MHz to Np/m/Hz.
    ClinicalToSi,
    /// Np/m/Hz to dB/cm/MHz.
    SiToClinical,
}

/// Np/m/Hz per dB/cm/MHz.
const DB_CM_MHZ_IN_SI: f64 = 100.0 * (LN_10 / 20.0) / 1e6;

pub fn atten_convert(value: f64, direction: AttenDirection) -> Result<f64> {
    if !(value >= 0.0) {
        return Err(MediumError::Negative { what: "attenuation", value });
    }
    Ok(match direction {
        AttenDirection::ClinicalToSi => value * DB_CM_MHZ_IN_SI,
        AttenDirection::SiToClinical => value / DB_CM_MHZ_IN_SI,
    })
}

/// dB/cm/MHz to Np/m/Hz. Panics on negative input; use [`atten_convert`]
/// for fallible conversion.
pub fn db_cm_mhz(value: f64) -> f64 {
    atten_convert(value, AttenDirection::ClinicalToSi).expect("attenuation must be non-negative")
}

/// `kappa' - j kappa''` with `kappa' = 1/(c^2 rho0)` and
/// `kappa'' = alpha / (pi c rho0)`; the `alpha^2` correction is dropped.
pub fn compressibility(c: f64, alpha: f64, rho0: f64) -> Result<C64> {
    if !(c > 0.0) {
        return Err(MediumError::NonPositive { what: "speed of sound", value: c });
    }
    if !(rho0 > 0.0) {
        return Err(MediumError::NonPositive { what: "density", value: rho0 });
    }
    if !(alpha >= 0.0) {
        return Err(MediumError::Negative { what: "attenuation", value: alpha });
    }
    Ok(C64::new(1.0 / (c * c * rho0), -alpha / (PI * c * rho0)))
}

/// Contrast of `med` on `inv_grid`. `med.grid` must equal `inv_grid` or be
/// an integer refinement of it; refined cells are averaged.
pub fn contrast_from_medium(med: &AcousticMedium, inv_grid: &Grid) -> Result<ContrastMap> {
    med.validate()?;
    let factor = inv_grid.refinement_to(&med.grid).ok_or(MediumError::ExtentMismatch)?;
    let kappa0 = med.background.compressibility()?;
    let rho0 = med.background.rho0;
    let fine: Vec<C64> = med
        .sos
        .iter()
        .zip(&med.atten)
        .map(|(&c, &a)| compressibility(c, a, rho0).map(|k| k / kappa0 - 1.0))
        .collect::<Result<_>>()?;
    let values = if factor == 1 {
        fine
    } else {
        Resampling::new(inv_grid.clone(), factor).restrict(&fine)
    };
    ContrastMap::new(inv_grid.clone(), values)
}

/// Inverse of [`contrast_from_medium`] on the contrast's own grid.
pub fn medium_from_contrast(m: &ContrastMap, background: &Background) -> Result<AcousticMedium> {
    let kappa0 = background.compressibility()?;
    let rho0 = background.rho0;
    let mut sos = Vec::with_capacity(m.values.len());
    let mut atten = Vec::with_capacity(m.values.len());
    let mut bad = Vec::new();
    for (n, v) in m.values.iter().enumerate() {
        let kappa = kappa0 * (1.0 + v);
        if !(kappa.re > 0.0) || !kappa.im.is_finite() {
            bad.push(n);
            sos.push(f64::NAN);
            atten.push(f64::NAN);
            continue;
        }
        let c = 1.0 / (kappa.re * rho0).sqrt();
        sos.push(c);
        atten.push(-PI * c * rho0 * kappa.im);
    }
    if !bad.is_empty() {
        return Err(MediumError::NonPhysical { cells: bad });
    }
    Ok(AcousticMedium { grid: m.grid.clone(), sos, atten, background: *background })
}

/// Injection (coarse to fine) and cell averaging (fine to coarse) between
/// a grid and its integer refinement. With cell-measure weighted inner
/// products the two are exact adjoints.
#[derive(Debug, Clone)]
pub struct Resampling {
    coarse: Grid,
    fine: Grid,
    factor: usize,
    /// Coarse parent of every fine cell.
    parent: Vec<usize>,
}

impl Resampling {
    pub fn new(coarse: Grid, factor: usize) -> Self {
        let fine = coarse.refine(factor);
        let f = factor.max(1);
        let parent = (0..fine.len())
            .map(|n| {
                let idx = fine.unravel(n);
                let mut c = [0; 3];
                for q in 0..coarse.dims() {
                    c[q] = idx[q] / f;
                }
                coarse.ravel(&c[..coarse.dims()])
            })
            .collect();
        Self { coarse, fine, factor: f, parent }
    }

    pub fn coarse(&self) -> &Grid {
        &self.coarse
    }

    pub fn fine(&self) -> &Grid {
        &self.fine
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    pub fn prolongate(&self, coarse: &[C64]) -> Vec<C64> {
        assert_eq!(coarse.len(), self.coarse.len(), "prolongate: coarse length");
        self.parent.iter().map(|&p| coarse[p]).collect()
    }

    pub fn restrict(&self, fine: &[C64]) -> Vec<C64> {
        let mut out = self.sum_children(fine);
        let w = 1.0 / self.factor.pow(self.coarse.dims() as u32) as f64;
        out.iter_mut().for_each(|v| *v *= w);
        out
    }

    /// Transpose of [`Resampling::prolongate`] under plain Euclidean inner
    /// products.
    pub fn sum_children(&self, fine: &[C64]) -> Vec<C64> {
        assert_eq!(fine.len(), self.fine.len(), "restrict: fine length");
        let mut out = vec![C64::new(0.0, 0.0); self.coarse.len()];
        for (&p, v) in self.parent.iter().zip(fine) {
            out[p] += v;
        }
        out
    }
}
