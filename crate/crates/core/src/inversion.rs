//! TV-regularized ADMM with a Gauss-Newton m-step.
//!
//! Per outer iteration: forward fields at `m_k`, adjoint refresh, the
//! normal equations `(J^H J + rho D^T D + gamma I) dm = b` solved by CG,
//! isotropic shrinkage for `g`, and the dual update for `u`. `D` is the
//! forward-difference gradient in grid units.

use crate::forward::{Dataset, ForwardError, ForwardModel, SourceKind, SolveStats};
use crate::krylov::{cg, norm, CgReport};
use crate::medium::{ContrastMap, Grid};
use crate::sensitivity::{refresh_policy, FieldBank, LinearizedOperator, Refresh};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error)]
pub enum InversionError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected} values, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, InversionError>;

/// Forward-difference gradient, rows `n * d + q`; the last slice along
/// each axis is zero.
pub fn grad(grid: &Grid, m: &[C64]) -> Vec<C64> {
    let d = grid.dims();
    let shape = grid.shape();
    let strides = grid.strides();
    let mut out = vec![ZERO; m.len() * d];
    for n in 0..m.len() {
        let idx = grid.unravel(n);
        for q in 0..d {
            if idx[q] + 1 < shape[q] {
                out[n * d + q] = m[n + strides[q]] - m[n];
            }
        }
    }
    out
}

/// Transpose of [`grad`].
pub fn div(grid: &Grid, a: &[C64]) -> Vec<C64> {
    let d = grid.dims();
    let shape = grid.shape();
    let strides = grid.strides();
    let n_cells = grid.len();
    let mut out = vec![ZERO; n_cells];
    for n in 0..n_cells {
        let idx = grid.unravel(n);
        for q in 0..d {
            if idx[q] + 1 < shape[q] {
                let v = a[n * d + q];
                out[n] -= v;
                out[n + strides[q]] += v;
            }
        }
    }
    out
}

/// Row-wise isotropic shrinkage `max(1 - tau / |a_n|, 0) a_n`.
pub fn shrink(a: &[C64], d: usize, tau: f64) -> Vec<C64> {
    let mut out = a.to_vec();
    for row in out.chunks_mut(d) {
        let len = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let f = if len > tau { 1.0 - tau / len } else { 0.0 };
        row.iter_mut().for_each(|v| *v *= f);
    }
    out
}

/// `sum_n |g_n|_2`.
pub fn tv_norm(g: &[C64], d: usize) -> f64 {
    g.chunks(d).map(|row| row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).sum()
}

/// Jacobian products used by the m-step.
pub trait Linearized {
    fn n_params(&self) -> usize;
    fn jvp(&self, a: &[C64]) -> Result<Dataset>;
    fn vjp(&self, b: &Dataset) -> Result<Vec<C64>>;
}

impl Linearized for LinearizedOperator<'_> {
    fn n_params(&self) -> usize {
        LinearizedOperator::n_params(self)
    }

    fn jvp(&self, a: &[C64]) -> Result<Dataset> {
        Ok(LinearizedOperator::jvp(self, a)?)
    }

    fn vjp(&self, b: &Dataset) -> Result<Vec<C64>> {
        Ok(LinearizedOperator::vjp(self, b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    /// TV weight; `None` sets `1e-3 |J^H d_obs|_inf` at the initial model.
    pub lambda: Option<f64>,
    /// Penalty; `None` sets `1000 lambda`, a shrink threshold of 1e-3.
    pub rho: Option<f64>,
    pub gamma: f64,
    #[serde(skip)]
    pub m_ref: Option<ContrastMap>,
    pub outer_iters: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Stop once `0.5 |F(m) - d|^2` is at or below this value.
    pub fidelity_threshold: Option<f64>,
    /// Adjoint fields are re-solved every this many iterations.
    pub adjoint_refresh: usize,
    pub real_contrast_only: bool,
    /// `u + (g - D m)` instead of `u + rho (g - D m)`.
    pub standard_dual_update: bool,
    /// Step halvings allowed when the m-subproblem objective increases.
    pub max_halvings: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            rho: None,
            gamma: 0.0,
            m_ref: None,
            outer_iters: 20,
            inner_tol: 1e-2,
            inner_max_iter: 30,
            fidelity_threshold: None,
            adjoint_refresh: 1,
            real_contrast_only: false,
            standard_dual_update: false,
            max_halvings: 4,
        }
    }
}

impl AdmmConfig {
    /// Unregularized Gauss-Newton.
    pub fn gauss_newton() -> Self {
        Self { lambda: Some(0.0), rho: Some(0.0), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(InversionError::Config(s.into()));
        if self.outer_iters == 0 {
            return bad("outer_iters must be >= 1");
        }
        if self.lambda.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
            return bad("lambda must be finite and >= 0");
        }
        if let Some(rho) = self.rho {
            if !(rho >= 0.0 && rho.is_finite()) {
                return bad("rho must be finite and >= 0");
            }
            if rho == 0.0 && self.lambda != Some(0.0) {
                return bad("rho must be > 0 unless lambda = 0");
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return bad("inner solver needs tol > 0 and max_iter >= 1");
        }
        if self.adjoint_refresh == 0 {
            return bad("adjoint_refresh must be >= 1");
        }
        Ok(())
    }
}

/// Weights in effect for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda: f64,
    pub rho: f64,
    pub gamma: f64,
}

impl Weights {
    /// Shrinkage threshold `lambda / rho` (zero when TV is off).
    pub fn threshold(&self) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda / self.rho
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `0.5 |F(m_k) - d|^2` before the update.
    pub fidelity_start: f64,
    /// `0.5 |F(m_{k+1}) - d|^2`.
    pub fidelity: f64,
    pub tv: f64,
    pub primal_residual: f64,
    pub inner_iterations: usize,
    pub inner_residual: f64,
    pub inner_breakdown: bool,
    /// Fraction of the Gauss-Newton step taken.
    pub step: f64,
    pub adjoints_refreshed: bool,
    pub solves: usize,
    pub gmres_iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub m: ContrastMap,
    pub g: Vec<C64>,
    pub u: Vec<C64>,
    pub k: usize,
    pub history: Vec<IterationRecord>,
}

impl AdmmState {
    pub fn new(m0: ContrastMap) -> Self {
        let g = grad(&m0.grid, &m0.values);
        let u = vec![ZERO; g.len()];
        Self { m: m0, g, u, k: 0, history: Vec::new() }
    }
}

/// `A x = J^H J x + rho D^T D x + gamma x`.
pub fn normal_apply<L: Linearized>(op: &L, grid: &Grid, w: &Weights, x: &[C64]) -> Result<Vec<C64>> {
    let mut out = op.vjp(&op.jvp(x)?)?;
    if w.rho != 0.0 {
        let dd = div(grid, &grad(grid, x));
        for (o, v) in out.iter_mut().zip(&dd) {
            *o += w.rho * v;
        }
    }
    for (o, v) in out.iter_mut().zip(x) {
        *o += w.gamma * v;
    }
    Ok(out)
}

/// `b = J^H r + rho D^T (g + u - D m) + gamma (m_ref - m)` with `r = d - F(m)`.
pub fn normal_rhs<L: Linearized>(op: &L, state: &AdmmState, residual: &Dataset, m_ref: Option<&ContrastMap>, w: &Weights) -> Result<Vec<C64>> {
    let grid = &state.m.grid;
    let mut b = op.vjp(residual)?;
    if w.rho != 0.0 {
        let gm = grad(grid, &state.m.values);
        let a: Vec<C64> = state.g.iter().zip(&state.u).zip(&gm).map(|((g, u), d)| g + u - d).collect();
        for (o, v) in b.iter_mut().zip(div(grid, &a)) {
            *o += w.rho * v;
        }
    }
    if w.gamma != 0.0 {
        if let Some(r) = m_ref {
            for ((o, mr), m) in b.iter_mut().zip(&r.values).zip(&state.m.values) {
                *o += w.gamma * (mr - m);
            }
        } else {
            for (o, m) in b.iter_mut().zip(&state.m.values) {
                *o -= w.gamma * m;
            }
        }
    }
    Ok(b)
}

/// Solves the normal equations by CG and returns `dm`. With
/// `real_contrast_only` the solve is restricted to real `dm`, whose normal
/// operator is `Re(A)`.
pub fn m_step<L: Linearized>(op: &L, state: &AdmmState, residual: &Dataset, cfg: &AdmmConfig, w: &Weights) -> Result<(Vec<C64>, CgReport)> {
    let grid = &state.m.grid;
    if op.n_params() != grid.len() {
        return Err(InversionError::Shape { what: "linearized operator", expected: grid.len(), got: op.n_params() });
    }
    let mut b = normal_rhs(op, state, residual, cfg.m_ref.as_ref(), w)?;
    let real = cfg.real_contrast_only;
    if real {
        b.iter_mut().for_each(|v| v.im = 0.0);
    }
    let mut err = None;
    let (dm, rep) = cg(
        |x, out| match normal_apply(op, grid, w, x) {
            Ok(ax) => {
                out.copy_from_slice(&ax);
                if real {
                    out.iter_mut().for_each(|v| v.im = 0.0);
                }
            }
            Err(e) => {
                out.iter_mut().for_each(|v| *v = ZERO);
                err.get_or_insert(e);
            }
        },
        &b,
        cfg.inner_tol,
        cfg.inner_max_iter,
    );
    match err {
        Some(e) => Err(e),
        None => Ok((dm, rep)),
    }
}

/// `g = shrink_{lambda/rho}(D m - u)`.
pub fn g_step(grid: &Grid, m: &[C64], u: &[C64], w: &Weights) -> Vec<C64> {
    let gm = grad(grid, m);
    let a: Vec<C64> = gm.iter().zip(u).map(|(g, u)| g - u).collect();
    shrink(&a, grid.dims(), w.threshold())
}

/// `u + rho (g - D m)`, or `u + (g - D m)` for the standard scaled form.
pub fn u_step(grid: &Grid, u: &[C64], g: &[C64], m: &[C64], rho: f64, standard: bool) -> Vec<C64> {
    let f = if standard { 1.0 } else { rho };
    let gm = grad(grid, m);
    u.iter().zip(g).zip(&gm).map(|((u, g), d)| u + f * (g - d)).collect()
}

pub fn fidelity(data: &Dataset, d_obs: &Dataset) -> f64 {
    0.5 * data.values().iter().zip(d_obs.values()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
}

/// Objective of the m-subproblem at `m` for fixed `g`, `u`.
fn subproblem_objective(fid: f64, m: &[C64], state: &AdmmState, m_ref: Option<&ContrastMap>, w: &Weights) -> f64 {
    let grid = &state.m.grid;
    let mut obj = fid;
    if w.gamma != 0.0 {
        let s: f64 = match m_ref {
            Some(r) => m.iter().zip(&r.values).map(|(a, b)| (a - b).norm_sqr()).sum(),
            None => m.iter().map(|a| a.norm_sqr()).sum(),
        };
        obj += 0.5 * w.gamma * s;
    }
    if w.rho != 0.0 {
        let gm = grad(grid, m);
        let s: f64 = state.g.iter().zip(&state.u).zip(&gm).map(|((g, u), d)| (g - d + u).norm_sqr()).sum();
        obj += 0.5 * w.rho * s;
    }
    obj
}

#[derive(Debug)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub weights: Weights,
    /// `F(m_K)`.
    pub data: Dataset,
}

/// A run stopped by an error; `state` holds the iterations completed.
#[derive(Debug, Error)]
#[error("inversion aborted after {} iterations: {error}", state.history.len())]
pub struct Aborted {
    #[source]
    pub error: InversionError,
    pub state: AdmmState,
}

fn add(a: &mut SolveStats, b: SolveStats) {
    a.solves += b.solves;
    a.iterations += b.iterations;
}

/// Runs the ADMM outer loop from `m0` (on the inversion grid of `model`).
/// `observe` is called with every completed iteration record.
pub fn run<F>(model: &ForwardModel, d_obs: &Dataset, m0: &ContrastMap, cfg: &AdmmConfig, mut observe: F) -> std::result::Result<AdmmOutcome, Aborted>
where
    F: FnMut(&IterationRecord),
{
    let mut state = AdmmState::new(m0.clone());
    match run_inner(model, d_obs, cfg, &mut state, &mut observe) {
        Ok((weights, data)) => Ok(AdmmOutcome { state, weights, data }),
        Err(error) => Err(Aborted { error, state }),
    }
}

fn run_inner<F>(model: &ForwardModel, d_obs: &Dataset, cfg: &AdmmConfig, state: &mut AdmmState, observe: &mut F) -> Result<(Weights, Dataset)>
where
    F: FnMut(&IterationRecord),
{
    cfg.validate()?;
    let grid = model.inversion_grid().clone();
    if state.m.grid != grid {
        return Err(InversionError::Config("initial model must live on the inversion grid".into()));
    }
    if d_obs.shape() != model.data_shape() {
        let shape = model.data_shape();
        return Err(InversionError::Shape { what: "observed data", expected: shape.iter().product(), got: d_obs.values().len() });
    }
    if let Some(r) = &cfg.m_ref {
        if r.grid != grid {
            return Err(InversionError::Config("reference model must live on the inversion grid".into()));
        }
    }
    let resampling = model.resampling();
    let mut m_fwd = resampling.prolongate(&state.m.values);
    let (mut primaries, stats0) = model.solve_fields(&m_fwd, SourceKind::Transmit, None)?;
    let mut data = model.scattered_data(&m_fwd, &primaries)?;
    let mut fid = fidelity(&data, d_obs);
    let mut adjoints: Vec<Vec<C64>> = Vec::new();
    let mut adjoint_stamp = 0;
    let mut weights: Option<Weights> = None;
    let mut carry = stats0;

    for k in 0..cfg.outer_iters {
        if cfg.fidelity_threshold.is_some_and(|t| fid <= t) {
            break;
        }
        let t0 = Instant::now();
        let mut stats = std::mem::take(&mut carry);
        let refresh = refresh_policy(k, cfg.adjoint_refresh);
        if refresh == Refresh::Solve || adjoints.is_empty() {
            let guesses = (!adjoints.is_empty()).then_some(adjoints.as_slice());
            let (a, s) = model.solve_fields(&m_fwd, SourceKind::Receiver, guesses)?;
            adjoints = a;
            adjoint_stamp = k;
            add(&mut stats, s);
        }
        let bank = FieldBank { primaries, adjoints, primary_stamp: k, adjoint_stamp };
        let (dm, rep, w) = {
            let op = LinearizedOperator::new(model, &bank);
            let w = match weights {
                Some(w) => w,
                None => {
                    let lambda = match cfg.lambda {
                        Some(l) => l,
                        None => 1e-3 * op.vjp(d_obs)?.iter().map(|v| v.norm()).fold(0.0, f64::max),
                    };
                    let rho = cfg.rho.unwrap_or(1000.0 * lambda);
                    if rho == 0.0 && lambda != 0.0 {
                        return Err(InversionError::Config("rho resolved to 0 with lambda > 0".into()));
                    }
                    *weights.insert(Weights { lambda, rho, gamma: cfg.gamma })
                }
            };
            let residual = Dataset::new(d_obs.shape(), d_obs.values().iter().zip(data.values()).map(|(a, b)| a - b).collect())?;
            let (dm, rep) = m_step(&op, state, &residual, cfg, &w)?;
            (dm, rep, w)
        };
        let FieldBank { primaries: p_k, adjoints: a_k, .. } = bank;
        adjoints = a_k;

        let mut step = 1.0;
        let mut next = None;
        if dm.iter().any(|v| *v != ZERO) {
            let obj0 = subproblem_objective(fid, &state.m.values, state, cfg.m_ref.as_ref(), &w);
            for h in 0..=cfg.max_halvings {
                let trial: Vec<C64> = state.m.values.iter().zip(&dm).map(|(m, d)| m + step * d).collect();
                let trial_fwd = resampling.prolongate(&trial);
                let (p, s) = model.solve_fields(&trial_fwd, SourceKind::Transmit, Some(&p_k))?;
                add(&mut stats, s);
                let d = model.scattered_data(&trial_fwd, &p)?;
                let f = fidelity(&d, d_obs);
                let obj = subproblem_objective(f, &trial, state, cfg.m_ref.as_ref(), &w);
                let accept = obj <= obj0 || h == cfg.max_halvings;
                if accept {
                    next = Some((trial, trial_fwd, p, d, f));
                    break;
                }
                step *= 0.5;
            }
        }
        let fid_start = fid;
        match next {
            Some((trial, trial_fwd, p, d, f)) => {
                state.m.values = trial;
                m_fwd = trial_fwd;
                primaries = p;
                data = d;
                fid = f;
            }
            None => {
                step = 0.0;
                primaries = p_k;
            }
        }
        state.g = g_step(&grid, &state.m.values, &state.u, &w);
        state.u = u_step(&grid, &state.u, &state.g, &state.m.values, w.rho, cfg.standard_dual_update);
        let gm = grad(&grid, &state.m.values);
        let primal: Vec<C64> = state.g.iter().zip(&gm).map(|(a, b)| a - b).collect();
        state.k = k + 1;
        let record = IterationRecord {
            k,
            fidelity_start: fid_start,
            fidelity: fid,
            tv: tv_norm(&state.g, grid.dims()),
            primal_residual: norm(&primal),
            inner_iterations: rep.iterations,
            inner_residual: rep.residual,
            inner_breakdown: rep.breakdown,
            step,
            adjoints_refreshed: adjoint_stamp == k,
            solves: stats.solves,
            gmres_iterations: stats.iterations,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        observe(&record);
        state.history.push(record);
    }
    let w = match weights {
        Some(w) => w,
        None => Weights { lambda: cfg.lambda.unwrap_or(0.0), rho: cfg.rho.unwrap_or(0.0), gamma: cfg.gamma },
    };
    Ok((w, data))
}
