//! Adjoint fields and matrix-free Jacobian products.
//!
//! With the symmetric cell kernel the discrete data derivative is exactly
//! `dP[i, j, l] / dm_n = k_l^2 |tau| p_il[n] pt_jl[n]`, where `pt_jl` is the
//! total field of a unit source at receiver `j`. The Jacobian is never
//! formed; `jvp` and `vjp` contract the stored fields directly.

use crate::forward::{Dataset, ForwardError, ForwardModel, SourceKind, SolveStats};
use crate::parallel::schedule;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub type Result<T> = std::result::Result<T, ForwardError>;

/// Total fields of every transmit and every adjoint receiver source, all
/// frequencies, indexed `[source * n_freqs + l]`.
#[derive(Debug, Clone)]
pub struct FieldBank {
    pub primaries: Vec<Vec<C64>>,
    pub adjoints: Vec<Vec<C64>>,
    /// Iteration at which the primaries were last solved.
    pub primary_stamp: usize,
    /// Iteration at which the adjoints were last solved.
    pub adjoint_stamp: usize,
}

impl FieldBank {
    /// Solves both halves at `m_fwd`.
    pub fn solve(model: &ForwardModel, m_fwd: &[C64], iteration: usize) -> Result<(Self, SolveStats, SolveStats)> {
        let (primaries, ps) = model.solve_fields(m_fwd, SourceKind::Transmit, None)?;
        let (adjoints, adj) = solve_adjoint_fields(model, m_fwd, None)?;
        Ok((Self { primaries, adjoints, primary_stamp: iteration, adjoint_stamp: iteration }, ps, adj))
    }
}

/// `pt_jl` for every receiver and frequency under the current contrast.
pub fn solve_adjoint_fields(model: &ForwardModel, m_fwd: &[C64], guesses: Option<&[Vec<C64>]>) -> Result<(Vec<Vec<C64>>, SolveStats)> {
    model.solve_fields(m_fwd, SourceKind::Receiver, guesses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refresh {
    Solve,
    Keep,
}

/// Adjoints are re-solved when `k mod period == 0`; `period == usize::MAX`
/// keeps the background (Born) adjoints after iteration 0.
pub fn refresh_policy(k: usize, period: usize) -> Refresh {
    let period = period.max(1);
    if k % period == 0 {
        Refresh::Solve
    } else {
        Refresh::Keep
    }
}

/// VIE solves in one iteration: primaries always, adjoints on refresh.
pub fn solves_per_iteration(n_t: usize, n_r: usize, n_f: usize, refresh: Refresh) -> usize {
    n_t * n_f + if refresh == Refresh::Solve { n_r * n_f } else { 0 }
}

/// `J` and `J^H` at the fields stored in a [`FieldBank`], acting on
/// inversion-grid vectors.
pub struct LinearizedOperator<'a> {
    model: &'a ForwardModel,
    bank: &'a FieldBank,
    /// `k_l^2 |tau_fwd|`.
    scale: Vec<C64>,
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(model: &'a ForwardModel, bank: &'a FieldBank) -> Self {
        let measure = model.forward_grid().cell_measure();
        let scale = model.wavenumbers().iter().map(|k| k.k_squared() * measure).collect();
        Self { model, bank, scale }
    }

    pub fn model(&self) -> &ForwardModel {
        self.model
    }

    pub fn n_params(&self) -> usize {
        self.model.inversion_grid().len()
    }

    /// `(J a)[i, j, l] = k_l^2 |tau| sum_n p_il[n] pt_jl[n] (P a)[n]`.
    pub fn jvp(&self, a: &[C64]) -> Result<Dataset> {
        if a.len() != self.n_params() {
            return Err(ForwardError::Shape { what: "jvp input", expected: self.n_params(), got: a.len() });
        }
        let [nt, nr, nf] = self.model.data_shape();
        let a_fwd = self.model.resampling().prolongate(a);
        let shards = schedule(self.model.workers(), nt);
        let blocks: Vec<Vec<C64>> = self.model.pool().install(|| {
            shards
                .par_iter()
                .map(|range| {
                    let mut block = vec![ZERO; range.len() * nr * nf];
                    let mut q = vec![ZERO; a_fwd.len()];
                    for (ii, i) in range.clone().enumerate() {
                        for l in 0..nf {
                            for ((qv, p), av) in q.iter_mut().zip(&self.bank.primaries[i * nf + l]).zip(&a_fwd) {
                                *qv = p * av;
                            }
                            for j in 0..nr {
                                let s: C64 = self.bank.adjoints[j * nf + l].iter().zip(&q).map(|(x, y)| x * y).sum();
                                block[(ii * nr + j) * nf + l] = self.scale[l] * s;
                            }
                        }
                    }
                    block
                })
                .collect()
        });
        Dataset::new([nt, nr, nf], blocks.concat())
    }

    /// Euclidean adjoint of [`LinearizedOperator::jvp`]: fine-grid
    /// contributions `conj(k^2 |tau| p pt) b` summed over each coarse
    /// cell's children. Work is split over cell ranges and every cell sums
    /// its terms in the same order, so the result is bit-identical for any
    /// worker count.
    pub fn vjp(&self, b: &Dataset) -> Result<Vec<C64>> {
        let shape = self.model.data_shape();
        if b.shape() != shape {
            return Err(ForwardError::Shape { what: "vjp input", expected: shape.iter().product(), got: b.values().len() });
        }
        let [nt, nr, nf] = shape;
        let n = self.model.forward_grid().len();
        let shards = schedule(self.model.workers(), n);
        let parts: Vec<Vec<C64>> = self.model.pool().install(|| {
            shards
                .par_iter()
                .map(|cells| {
                    let mut acc = vec![ZERO; cells.len()];
                    let mut r = vec![ZERO; cells.len()];
                    for i in 0..nt {
                        for l in 0..nf {
                            r.iter_mut().for_each(|v| *v = ZERO);
                            for j in 0..nr {
                                let bij = b.get(i, j, l);
                                if bij == ZERO {
                                    continue;
                                }
                                for (rv, pt) in r.iter_mut().zip(&self.bank.adjoints[j * nf + l][cells.clone()]) {
                                    *rv += pt.conj() * bij;
                                }
                            }
                            let s = self.scale[l].conj();
                            for ((av, p), rv) in acc.iter_mut().zip(&self.bank.primaries[i * nf + l][cells.clone()]).zip(&r) {
                                *av += s * p.conj() * rv;
                            }
                        }
                    }
                    acc
                })
                .collect()
        });
        let total = parts.concat();
        Ok(self.model.resampling().sum_children(&total))
    }
}
