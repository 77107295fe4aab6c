//! Quick oracle checks of the numerical core, runnable from the CLI.

use crate::forward::{solve_total_field, ArrayGeometry, Dataset, ForwardConfig, ForwardModel, FrequencySet, TransmitPlan};
use crate::greens::{radiate, BackgroundWavenumber, ConvolutionKernel};
use crate::inversion::{div, grad, run, shrink, AdmmConfig};
use crate::krylov::GmresConfig;
use crate::medium::{Background, ContrastMap, Grid};
use crate::oracles::{cylinder_contrast, cylinder_total_field, dense_apply, dense_radiate, rel_l2};
use crate::sensitivity::{FieldBank, LinearizedOperator};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Measured value and the bound it was held to.
    pub detail: String,
    pub seconds: f64,
}

type Outcome = Result<(bool, String), String>;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn within(name: &str, value: f64, bound: f64) -> (bool, String) {
    (value <= bound, format!("{name} {value:.3e} (bound {bound:.0e})"))
}

fn dense_operators() -> Outcome {
    let bg = Background::default();
    let grid = Grid::centered(&[24, 24], 1e-4, 1e-3).map_err(|e| e.to_string())?;
    let k = BackgroundWavenumber::new(1e6, &bg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_vec(grid.len(), &mut rng);
    let fast = ConvolutionKernel::new(&grid, &k).apply(&f).map_err(|e| e.to_string())?;
    let conv = rel_l2(&fast, &dense_apply(&grid, &k, &f));
    let points: Vec<_> = (0..8).map(|i| [-1.5e-3 + 4e-4 * i as f64, 0.0, 0.0]).collect();
    let rad = rel_l2(&radiate(&grid, &k, &f, &points).map_err(|e| e.to_string())?, &dense_radiate(&grid, &k, &f, &points));
    let err = conv.max(rad);
    Ok(within("max relative L2", err, 1e-12))
}

fn cylinder() -> Outcome {
    let bg = Background::default();
    let (f, a, c_in) = (1e6, 2e-3, 1600.0);
    let h = bg.c0 / f / 20.0;
    let n = (5e-3 / h).ceil() as usize;
    let grid = Grid::centered(&[n, n], h, -0.5 * n as f64 * h).map_err(|e| e.to_string())?;
    let m = cylinder_contrast(&grid, a, [0.0, 0.0], c_in, &bg, 8);
    let k = BackgroundWavenumber::new(f, &bg).map_err(|e| e.to_string())?;
    let kernel = ConvolutionKernel::new(&grid, &k);
    let p0: Vec<C64> = (0..grid.len()).map(|i| C64::new(0.0, -k.k0.re * grid.center(i)[1]).exp()).collect();
    let (p, _) = solve_total_field(&m.values, &p0, &kernel, &GmresConfig { tol: 1e-8, ..Default::default() }, None).map_err(|e| e.to_string())?;
    let k1 = 2.0 * std::f64::consts::PI * f / c_in;
    let (mut got, mut want) = (Vec::new(), Vec::new());
    for i in 0..grid.len() {
        let c = grid.center(i);
        if c[0].hypot(c[1]) + h / std::f64::consts::SQRT_2 < a {
            got.push(p[i]);
            want.push(cylinder_total_field(k.k0.re, k1, a, c[0], c[1]));
        }
    }
    Ok(within("interior relative L2", rel_l2(&got, &want), 0.02))
}

fn small_model(workers: usize) -> Result<ForwardModel, String> {
    let grid = Grid::centered(&[16, 16], 2e-4, 1e-3).map_err(|e| e.to_string())?;
    let geom = ArrayGeometry::linear(6, 5e-4, TransmitPlan::PlaneWave { angles_deg: vec![-10.0, 0.0, 10.0] });
    let freqs = FrequencySet::new(vec![4e5, 8e5]).map_err(|e| e.to_string())?;
    ForwardModel::new(&grid, &geom, &freqs, &Background::default(), &ForwardConfig { workers, ..Default::default() }).map_err(|e| e.to_string())
}

fn adjoint(workers: usize) -> Outcome {
    let model = small_model(workers)?;
    let m_fwd: Vec<C64> = (0..model.forward_grid().len()).map(|n| C64::new(0.05 * ((n % 7) as f64 / 7.0), 0.0)).collect();
    let (bank, _, _) = FieldBank::solve(&model, &m_fwd, 0).map_err(|e| e.to_string())?;
    let op = LinearizedOperator::new(&model, &bank);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let a = random_vec(op.n_params(), &mut rng);
        let shape = model.data_shape();
        let b = Dataset::new(shape, random_vec(shape.iter().product(), &mut rng)).map_err(|e| e.to_string())?;
        let ja = op.jvp(&a).map_err(|e| e.to_string())?;
        let gap = (dot(b.values(), ja.values()) - dot(&op.vjp(&b).map_err(|e| e.to_string())?, &a)).norm();
        worst = worst.max(gap / (ja.norm() * b.norm()));
    }
    Ok(within("normalized gap", worst, 1e-10))
}

fn tv_pieces() -> Outcome {
    let grid = Grid::centered(&[9, 7], 1e-4, 1e-3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_vec(grid.len(), &mut rng);
    let a = random_vec(2 * grid.len(), &mut rng);
    let gap = (dot(&a, &grad(&grid, &m)) - dot(&div(&grid, &a), &m)).norm() / (m.len() as f64);
    // Shrinking (3, 4) by 1 keeps the direction and removes one unit of length.
    let s = shrink(&[C64::new(3.0, 0.0), C64::new(4.0, 0.0)], 2, 1.0);
    let prox = (s[0] - C64::new(2.4, 0.0)).norm() + (s[1] - C64::new(3.2, 0.0)).norm();
    Ok(within("grad/div gap and shrink error", gap.max(prox), 1e-13))
}

fn fixed_point() -> Outcome {
    let model = small_model(1)?;
    let grid = model.inversion_grid().clone();
    let m0 = ContrastMap::new(grid.clone(), vec![C64::new(0.02, -1e-3); grid.len()]).map_err(|e| e.to_string())?;
    let d = model.simulate(&m0).map_err(|e| e.to_string())?;
    let cfg = AdmmConfig { outer_iters: 3, lambda: Some(1e-3), gamma: 1e-5, m_ref: Some(m0.clone()), ..Default::default() };
    let out = run(&model, &d, &m0, &cfg, |_| {}).map_err(|e| e.to_string())?;
    let drift = out.state.m.values.iter().zip(&m0.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(within("max contrast drift", drift, 1e-12))
}

/// Runs every check; `workers` is used by the parallel checks.
pub fn run_all(workers: usize) -> Vec<Check> {
    let checks: Vec<(&'static str, Box<dyn Fn() -> Outcome>)> = vec![
        ("dense_operator_oracle", Box::new(dense_operators)),
        ("cylinder_series_oracle", Box::new(cylinder)),
        ("adjoint_identity", Box::new(move || adjoint(workers))),
        ("tv_operators", Box::new(tv_pieces)),
        ("fixed_point", Box::new(fixed_point)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let t0 = Instant::now();
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            Check { name, passed, detail, seconds: t0.elapsed().as_secs_f64() }
        })
        .collect()
}
