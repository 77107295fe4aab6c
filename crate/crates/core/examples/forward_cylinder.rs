//! Total field inside a penetrable cylinder against the partial-wave series.
use num_complex::Complex64 as C64;
use sosfwi::forward::solve_total_field;
use sosfwi::greens::{BackgroundWavenumber, ConvolutionKernel};
use sosfwi::krylov::GmresConfig;
use sosfwi::medium::{Background, Grid};
use sosfwi::oracles::{cylinder_contrast, cylinder_total_field, rel_l2};

fn main() {
    let bg = Background::default();
    let (f, a, c_in) = (1e6, 2e-3, 1600.0);
    let h = bg.c0 / f / 20.0;
    let n = (5e-3 / h).ceil() as usize;
    let grid = Grid::centered(&[n, n], h, -0.5 * n as f64 * h).unwrap();
    let m = cylinder_contrast(&grid, a, [0.0, 0.0], c_in, &bg, 8);
    let k = BackgroundWavenumber::new(f, &bg).unwrap();
    let p0: Vec<C64> = (0..grid.len()).map(|i| C64::new(0.0, -k.k0.re * grid.center(i)[1]).exp()).collect();
    let cfg = GmresConfig { tol: 1e-8, ..Default::default() };
    let (p, report) = solve_total_field(&m.values, &p0, &ConvolutionKernel::new(&grid, &k), &cfg, None).unwrap();
    let k1 = 2.0 * std::f64::consts::PI * f / c_in;
    let inside: Vec<usize> = (0..grid.len()).filter(|&i| grid.center(i)[0].hypot(grid.center(i)[1]) + h < a).collect();
    let got: Vec<C64> = inside.iter().map(|&i| p[i]).collect();
    let want: Vec<C64> = inside.iter().map(|&i| cylinder_total_field(k.k0.re, k1, a, grid.center(i)[0], grid.center(i)[1])).collect();
    println!("{n}x{n} grid, GMRES {} iterations, interior error {:.3}%", report.iterations, 100.0 * rel_l2(&got, &want));
}
