//! Incident fields, the total-field solve `(I - K diag(m)) p = p0`, and the
//! data equation that together make the nonlinear forward map `F(m)`.
//!
//! Every source and receiver couples to the grid through the same
//! cell-averaged Green's vector `g_e[n] = (1/|tau|) int_{tau_n} G(x - x_e) dx`,
//! averaged over the element's elevation midpoints in 3D. Transmit `i` has
//! incident field `p0_i = sum_e w_ie g_e`, and receiver `j` reads
//! `P_j = k0^2 |tau| sum_n g_j[n] m[n] p[n]`.

use crate::greens::{point_coupling, Accuracy, BackgroundWavenumber, ConvolutionKernel, ConvolutionWorkspace, GreensError};
use crate::krylov::{gmres, norm, GmresConfig, SolveReport};
use crate::medium::{Background, ContrastMap, Grid, MediumError, Point, Resampling};
use crate::parallel::{build_pool, schedule};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const J: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Transmit,
    Receiver,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Transmit => "transmit",
            SourceKind::Receiver => "adjoint receiver",
        })
    }
}

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("{kind} {index}, frequency {freq}: GMRES stopped at relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { kind: SourceKind, index: usize, freq: usize, residual: f64, iterations: usize },
    #[error("{kind} index {index} out of range ({count} available)")]
    BadIndex { kind: SourceKind, index: usize, count: usize },
    #[error("{what}: expected {expected} values, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("invalid {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ForwardError>;

/// How transmit events are formed from the array elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransmitPlan {
    /// Steered plane waves synthesized by firing every element with a
    /// linear delay law.
    PlaneWave { angles_deg: Vec<f64> },
    /// Exact plane waves `exp(-j k0 (x sin a + z cos a))`.
    IdealPlaneWave { angles_deg: Vec<f64> },
    /// One transmit per element.
    PerElement,
}

/// A linear array at depth 0 whose elements also act as receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub element_centers: Vec<Point>,
    pub pitch: f64,
    /// Element length along the elevation axis (3D); 0 in 2D.
    pub elevation_width: f64,
    /// Midpoints used along the elevation segment (3D).
    pub elevation_points: usize,
    pub transmit: TransmitPlan,
}

impl ArrayGeometry {
    /// `elements` centres spaced by `pitch`, symmetric about lateral 0.
    pub fn linear(elements: usize, pitch: f64, transmit: TransmitPlan) -> Self {
        let element_centers = (0..elements).map(|e| [(e as f64 - 0.5 * (elements as f64 - 1.0)) * pitch, 0.0, 0.0]).collect();
        Self { element_centers, pitch, elevation_width: 0.0, elevation_points: 1, transmit }
    }

    pub fn with_elevation(mut self, width: f64, points: usize) -> Self {
        self.elevation_width = width;
        self.elevation_points = points.max(1);
        self
    }

    pub fn n_elements(&self) -> usize {
        self.element_centers.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.element_centers.len()
    }

    pub fn n_transmits(&self) -> usize {
        match &self.transmit {
            TransmitPlan::PlaneWave { angles_deg } | TransmitPlan::IdealPlaneWave { angles_deg } => angles_deg.len(),
            TransmitPlan::PerElement => self.element_centers.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_centers.is_empty() {
            return Err(ForwardError::Invalid("geometry: no elements".into()));
        }
        if self.n_transmits() == 0 {
            return Err(ForwardError::Invalid("geometry: no transmit events".into()));
        }
        if !(self.pitch > 0.0) || self.elevation_width < 0.0 {
            return Err(ForwardError::Invalid("geometry: pitch must be positive and elevation width non-negative".into()));
        }
        Ok(())
    }

    /// Points that sample element `e` (one in 2D, the elevation midpoints in
    /// 3D, where the elevation axis is axis 1).
    pub fn aperture_points(&self, e: usize, dims: usize) -> Vec<Point> {
        let c = self.element_centers[e];
        if dims == 2 || self.elevation_width == 0.0 {
            return vec![c];
        }
        let m = self.elevation_points.max(1);
        (0..m)
            .map(|k| {
                let mut p = c;
                p[1] += -0.5 * self.elevation_width + (k as f64 + 0.5) * self.elevation_width / m as f64;
                p
            })
            .collect()
    }
}

/// Strictly increasing positive frequencies, stored in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencySet {
    hz: Vec<f64>,
}

impl FrequencySet {
    pub fn new(hz: Vec<f64>) -> Result<Self> {
        if hz.is_empty() || hz.iter().any(|f| !(*f > 0.0 && f.is_finite())) || hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ForwardError::Invalid("frequencies must be positive and strictly increasing".into()));
        }
        Ok(Self { hz })
    }

    /// `n` frequencies spaced uniformly from `lo` to `hi` inclusive.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let hz = if n == 1 { vec![lo] } else { (0..n).map(|l| lo + (hi - lo) * l as f64 / (n - 1) as f64).collect() };
        Self::new(hz)
    }

    pub fn hz(&self) -> &[f64] {
        &self.hz
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.hz.iter().map(|f| 2.0 * std::f64::consts::PI * f).collect()
    }

    pub fn len(&self) -> usize {
        self.hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hz.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldTag {
    pub kind: SourceKind,
    pub index: usize,
    pub freq: usize,
}

/// Pressure on the forward grid for one source and frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefield {
    pub grid: Grid,
    pub values: Vec<C64>,
    pub tag: FieldTag,
}

/// Measurement tensor indexed `(transmit i, receiver j, frequency l)`,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    values: Vec<C64>,
}

impl Dataset {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self { shape, values: vec![ZERO; shape.iter().product()] }
    }

    pub fn new(shape: [usize; 3], values: Vec<C64>) -> Result<Self> {
        let expected = shape.iter().product();
        if values.len() != expected {
            return Err(ForwardError::Shape { what: "dataset", expected, got: values.len() });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(ForwardError::Invalid("dataset: non-finite entries".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + l
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> C64 {
        self.values[self.index(i, j, l)]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Root mean square modulus over the whole tensor.
    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.norm() / (self.values.len() as f64).sqrt()
        }
    }
}

/// Adds circular complex Gaussian noise with per-component standard
/// deviation `level * rms(d) / sqrt(2)`.
pub fn add_noise(data: &Dataset, level: f64, seed: u64) -> Result<Dataset> {
    if !(level >= 0.0) {
        return Err(ForwardError::Invalid(format!("noise level {level}")));
    }
    if level == 0.0 {
        return Ok(data.clone());
    }
    let sigma = level * data.rms() / std::f64::consts::SQRT_2;
    let normal = Normal::new(0.0, sigma).map_err(|e| ForwardError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = data
        .values
        .iter()
        .map(|v| {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            v + C64::new(re, im)
        })
        .collect();
    Ok(Dataset { shape: data.shape, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardConfig {
    /// Forward grid = inversion grid refined by this factor.
    pub refinement: usize,
    pub gmres_restart: usize,
    pub gmres_tol: f64,
    pub gmres_max_iter: usize,
    /// Start each solve from the previous frequency's field of the same
    /// source instead of the incident field.
    pub warm_start: bool,
    pub workers: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { refinement: 2, gmres_restart: 30, gmres_tol: 1e-6, gmres_max_iter: 400, warm_start: false, workers: 1 }
    }
}

impl ForwardConfig {
    pub fn gmres(&self) -> GmresConfig {
        GmresConfig { restart: self.gmres_restart, tol: self.gmres_tol, max_iter: self.gmres_max_iter }
    }
}

/// Cell-averaged Green's vector of element `e` (elevation-averaged in 3D).
fn element_vector(grid: &Grid, geom: &ArrayGeometry, e: usize, k: C64) -> Vec<C64> {
    let pts = geom.aperture_points(e, grid.dims());
    let scale = 1.0 / (grid.cell_measure() * pts.len() as f64);
    let mut acc = vec![ZERO; grid.len()];
    for p in &pts {
        for (a, v) in acc.iter_mut().zip(point_coupling(grid, k, p, Accuracy::Coupling)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|v| *v *= scale);
    acc
}

/// Plane-wave steering weights `exp(-j omega x_e sin(a) / c0)`.
fn steering_weights(geom: &ArrayGeometry, angle_deg: f64, omega: f64, c0: f64) -> Vec<C64> {
    let s = angle_deg.to_radians().sin();
    geom.element_centers.iter().map(|x| (-J * (omega * x[0] * s / c0)).exp()).collect()
}

fn ideal_plane_wave(grid: &Grid, angle_deg: f64, k: C64) -> Vec<C64> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let depth = grid.dims() - 1;
    (0..grid.len())
        .map(|n| {
            let x = grid.center(n);
            (-J * k * (x[0] * s + x[depth] * c)).exp()
        })
        .collect()
}

fn synthesize(weights: &[C64], elements: &[Vec<C64>]) -> Vec<C64> {
    let mut out = vec![ZERO; elements[0].len()];
    for (w, g) in weights.iter().zip(elements) {
        for (o, v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    out
}

/// Incident field of `transmit` on `grid` at wavenumber `k`.
pub fn incident_field(geom: &ArrayGeometry, transmit: usize, k: &BackgroundWavenumber, grid: &Grid, background: &Background) -> Result<Wavefield> {
    let count = geom.n_transmits();
    if transmit >= count {
        return Err(ForwardError::BadIndex { kind: SourceKind::Transmit, index: transmit, count });
    }
    let values = match &geom.transmit {
        TransmitPlan::PerElement => element_vector(grid, geom, transmit, k.k0),
        TransmitPlan::IdealPlaneWave { angles_deg } => ideal_plane_wave(grid, angles_deg[transmit], k.k0),
        TransmitPlan::PlaneWave { angles_deg } => {
            let elements: Vec<Vec<C64>> = (0..geom.n_elements()).map(|e| element_vector(grid, geom, e, k.k0)).collect();
            synthesize(&steering_weights(geom, angles_deg[transmit], k.omega, background.c0), &elements)
        }
    };
    Ok(Wavefield { grid: grid.clone(), values, tag: FieldTag { kind: SourceKind::Transmit, index: transmit, freq: 0 } })
}

/// Solves `p - apply(m p) = p0` by restarted GMRES, starting from `guess`
/// or from `p0`. The returned report carries the residual recomputed
/// independently of the solver; non-convergence is reported, not raised.
pub fn solve_total_field(
    m_fwd: &[C64],
    p0: &[C64],
    kernel: &ConvolutionKernel,
    cfg: &GmresConfig,
    guess: Option<&[C64]>,
) -> Result<(Vec<C64>, SolveReport)> {
    let n = kernel.grid().len();
    if m_fwd.len() != n || p0.len() != n {
        return Err(ForwardError::Shape { what: "total-field solve", expected: n, got: m_fwd.len().min(p0.len()) });
    }
    if m_fwd.iter().all(|v| *v == ZERO) {
        return Ok((p0.to_vec(), SolveReport { iterations: 0, residual: 0.0, converged: true }));
    }
    let mut ws = ConvolutionWorkspace::default();
    let mut mp = vec![ZERO; n];
    let mut kp = vec![ZERO; n];
    let mut x = guess.map_or_else(|| p0.to_vec(), |g| g.to_vec());
    let report = gmres(
        |v, out| {
            for ((a, b), c) in mp.iter_mut().zip(m_fwd).zip(v) {
                *a = b * c;
            }
            kernel.apply_into(&mp, &mut kp, &mut ws).expect("shapes checked");
            for ((o, a), b) in out.iter_mut().zip(v).zip(&kp) {
                *o = a - b;
            }
        },
        p0,
        &mut x,
        cfg,
    );
    let residual = total_field_residual(m_fwd, p0, &x, kernel)?;
    let converged = residual <= cfg.tol * (1.0 + 1e-6);
    Ok((x, SolveReport { iterations: report.iterations, residual, converged }))
}

/// `||p - p0 - apply(m p)|| / ||p0||`.
pub fn total_field_residual(m_fwd: &[C64], p0: &[C64], p: &[C64], kernel: &ConvolutionKernel) -> Result<f64> {
    let mp: Vec<C64> = m_fwd.iter().zip(p).map(|(a, b)| a * b).collect();
    let kp = kernel.apply(&mp)?;
    let r: Vec<C64> = p.iter().zip(p0).zip(&kp).map(|((a, b), c)| a - b - c).collect();
    let den = norm(p0);
    Ok(if den == 0.0 { norm(&r) } else { norm(&r) / den })
}

/// Per-call solve statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub solves: usize,
    pub iterations: usize,
}

/// Precomputed per-frequency kernels, element vectors and incident fields
/// for one array, background and forward grid.
pub struct ForwardModel {
    resampling: Resampling,
    geometry: ArrayGeometry,
    freqs: FrequencySet,
    background: Background,
    config: ForwardConfig,
    wavenumbers: Vec<BackgroundWavenumber>,
    kernels: Vec<ConvolutionKernel>,
    /// `[l][e]` cell-averaged Green's vectors of the elements.
    elements: Vec<Vec<Vec<C64>>>,
    /// `[l][i]` incident fields; empty when transmits are the elements.
    incident: Vec<Vec<Vec<C64>>>,
    pool: rayon::ThreadPool,
}

impl fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardModel")
            .field("forward_grid", self.resampling.fine())
            .field("transmits", &self.geometry.n_transmits())
            .field("receivers", &self.geometry.n_receivers())
            .field("freqs", &self.freqs)
            .finish()
    }
}

impl ForwardModel {
    /// `base` is the inversion grid; the forward grid is its refinement by
    /// `config.refinement`.
    pub fn new(base: &Grid, geometry: &ArrayGeometry, freqs: &FrequencySet, background: &Background, config: &ForwardConfig) -> Result<Self> {
        geometry.validate()?;
        if config.refinement == 0 {
            return Err(ForwardError::Invalid("forward refinement must be >= 1".into()));
        }
        let resampling = Resampling::new(base.clone(), config.refinement);
        let grid = resampling.fine().clone();
        let pool = build_pool(config.workers);
        let wavenumbers: Vec<BackgroundWavenumber> =
            freqs.hz().iter().map(|&f| BackgroundWavenumber::new(f, background)).collect::<std::result::Result<_, _>>()?;

        let (kernels, elements) = pool.install(|| {
            let kernels: Vec<ConvolutionKernel> = wavenumbers.par_iter().map(|k| ConvolutionKernel::new(&grid, k)).collect();
            let elements: Vec<Vec<Vec<C64>>> = wavenumbers
                .iter()
                .map(|k| (0..geometry.n_elements()).into_par_iter().map(|e| element_vector(&grid, geometry, e, k.k0)).collect())
                .collect();
            (kernels, elements)
        });

        let incident = match &geometry.transmit {
            TransmitPlan::PerElement => Vec::new(),
            TransmitPlan::PlaneWave { angles_deg } => wavenumbers
                .iter()
                .zip(&elements)
                .map(|(k, el)| angles_deg.iter().map(|&a| synthesize(&steering_weights(geometry, a, k.omega, background.c0), el)).collect())
                .collect(),
            TransmitPlan::IdealPlaneWave { angles_deg } => {
                wavenumbers.iter().map(|k| angles_deg.iter().map(|&a| ideal_plane_wave(&grid, a, k.k0)).collect()).collect()
            }
        };

        Ok(Self {
            resampling,
            geometry: geometry.clone(),
            freqs: freqs.clone(),
            background: *background,
            config: config.clone(),
            wavenumbers,
            kernels,
            elements,
            incident,
            pool,
        })
    }

    pub fn forward_grid(&self) -> &Grid {
        self.resampling.fine()
    }

    pub fn inversion_grid(&self) -> &Grid {
        self.resampling.coarse()
    }

    pub fn resampling(&self) -> &Resampling {
        &self.resampling
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn freqs(&self) -> &FrequencySet {
        &self.freqs
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.config
    }

    pub fn wavenumbers(&self) -> &[BackgroundWavenumber] {
        &self.wavenumbers
    }

    pub fn kernel(&self, l: usize) -> &ConvolutionKernel {
        &self.kernels[l]
    }

    pub fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    pub fn workers(&self) -> usize {
        self.config.workers.max(1)
    }

    pub fn data_shape(&self) -> [usize; 3] {
        [self.geometry.n_transmits(), self.geometry.n_receivers(), self.freqs.len()]
    }

    pub fn incident(&self, i: usize, l: usize) -> &[C64] {
        if self.incident.is_empty() {
            &self.elements[l][i]
        } else {
            &self.incident[l][i]
        }
    }

    /// Cell-averaged Green's vector of receiver `j` (also the incident field
    /// of the adjoint source at `j`).
    pub fn receiver_vector(&self, j: usize, l: usize) -> &[C64] {
        &self.elements[l][j]
    }

    fn source_vector(&self, kind: SourceKind, index: usize, l: usize) -> &[C64] {
        match kind {
            SourceKind::Transmit => self.incident(index, l),
            SourceKind::Receiver => self.receiver_vector(index, l),
        }
    }

    /// Contrast on the forward grid from a map on either grid.
    pub fn forward_contrast(&self, m: &ContrastMap) -> Result<Vec<C64>> {
        if &m.grid == self.forward_grid() {
            Ok(m.values.clone())
        } else if &m.grid == self.inversion_grid() {
            Ok(self.resampling.prolongate(&m.values))
        } else {
            Err(ForwardError::Medium(MediumError::ExtentMismatch))
        }
    }

    /// Total fields of every source of `kind` at every frequency, indexed
    /// `[source * n_freqs + l]`. Sources are sharded contiguously over the
    /// workers; each solve is independent, so the result does not depend on
    /// the worker count.
    pub fn solve_fields(&self, m_fwd: &[C64], kind: SourceKind, guesses: Option<&[Vec<C64>]>) -> Result<(Vec<Vec<C64>>, SolveStats)> {
        let n = self.forward_grid().len();
        if m_fwd.len() != n {
            return Err(ForwardError::Shape { what: "forward contrast", expected: n, got: m_fwd.len() });
        }
        let sources = match kind {
            SourceKind::Transmit => self.geometry.n_transmits(),
            SourceKind::Receiver => self.geometry.n_receivers(),
        };
        let nf = self.freqs.len();
        let cfg = self.config.gmres();
        let shards = schedule(self.workers(), sources);
        let per_shard: Vec<Result<(Vec<Vec<C64>>, SolveStats)>> = self.pool.install(|| {
            shards
                .par_iter()
                .map(|range| {
                    let mut out = Vec::with_capacity(range.len() * nf);
                    let mut stats = SolveStats::default();
                    for s in range.clone() {
                        for l in 0..nf {
                            let p0 = self.source_vector(kind, s, l);
                            let guess = match (guesses, self.config.warm_start, l) {
                                (Some(g), _, _) => Some(g[s * nf + l].as_slice()),
                                (None, true, l) if l > 0 => Some(out.last().map(|v: &Vec<C64>| v.as_slice()).unwrap_or(p0)),
                                _ => None,
                            };
                            let (p, rep) = solve_total_field(m_fwd, p0, &self.kernels[l], &cfg, guess)?;
                            if !rep.converged {
                                return Err(ForwardError::NotConverged {
                                    kind,
                                    index: s,
                                    freq: l,
                                    residual: rep.residual,
                                    iterations: rep.iterations,
                                });
                            }
                            stats.solves += 1;
                            stats.iterations += rep.iterations;
                            out.push(p);
                        }
                    }
                    Ok((out, stats))
                })
                .collect()
        });
        let mut fields = Vec::with_capacity(sources * nf);
        let mut stats = SolveStats::default();
        for r in per_shard {
            let (f, s) = r?;
            fields.extend(f);
            stats.solves += s.solves;
            stats.iterations += s.iterations;
        }
        Ok((fields, stats))
    }

    /// Data equation: `P[i, j, l] = k0^2 |tau| sum_n g_j[n] m[n] p_il[n]`.
    pub fn scattered_data(&self, m_fwd: &[C64], fields: &[Vec<C64>]) -> Result<Dataset> {
        let [nt, nr, nf] = self.data_shape();
        if fields.len() != nt * nf {
            return Err(ForwardError::Shape { what: "primary fields", expected: nt * nf, got: fields.len() });
        }
        let measure = self.forward_grid().cell_measure();
        let shards = schedule(self.workers(), nt);
        let blocks: Vec<Vec<C64>> = self.pool.install(|| {
            shards
                .par_iter()
                .map(|range| {
                    let mut block = vec![ZERO; range.len() * nr * nf];
                    let mut q = vec![ZERO; m_fwd.len()];
                    for (ii, i) in range.clone().enumerate() {
                        for l in 0..nf {
                            for ((a, b), c) in q.iter_mut().zip(m_fwd).zip(&fields[i * nf + l]) {
                                *a = b * c;
                            }
                            let scale = self.wavenumbers[l].k_squared() * measure;
                            for j in 0..nr {
                                let g = &self.elements[l][j];
                                let s: C64 = g.iter().zip(&q).map(|(a, b)| a * b).sum();
                                block[(ii * nr + j) * nf + l] = scale * s;
                            }
                        }
                    }
                    block
                })
                .collect()
        });
        Dataset::new([nt, nr, nf], blocks.concat())
    }

    /// `F(m)` and the primary fields that produced it.
    pub fn simulate_with_fields(&self, m: &ContrastMap) -> Result<(Dataset, Vec<Vec<C64>>, SolveStats)> {
        let m_fwd = self.forward_contrast(m)?;
        let (fields, stats) = self.solve_fields(&m_fwd, SourceKind::Transmit, None)?;
        let data = self.scattered_data(&m_fwd, &fields)?;
        Ok((data, fields, stats))
    }

    pub fn simulate(&self, m: &ContrastMap) -> Result<Dataset> {
        Ok(self.simulate_with_fields(m)?.0)
    }

    /// First Born approximation: the data equation with `p = p0`.
    pub fn born(&self, m: &ContrastMap) -> Result<Dataset> {
        let m_fwd = self.forward_contrast(m)?;
        let [nt, _, nf] = self.data_shape();
        let fields: Vec<Vec<C64>> = (0..nt).flat_map(|i| (0..nf).map(move |l| (i, l))).map(|(i, l)| self.incident(i, l).to_vec()).collect();
        self.scattered_data(&m_fwd, &fields)
    }
}

/// `F(m)` on the grid of `m` refined by `config.refinement`.
pub fn forward(m: &ContrastMap, geometry: &ArrayGeometry, freqs: &FrequencySet, background: &Background, config: &ForwardConfig) -> Result<Dataset> {
    ForwardModel::new(&m.grid, geometry, freqs, background, config)?.simulate(m)
}
