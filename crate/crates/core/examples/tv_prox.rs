//! Forward-difference gradient, its adjoint, and isotropic shrinkage.
use num_complex::Complex64 as C64;
use sosfwi::inversion::{div, grad, shrink, tv_norm};
use sosfwi::medium::Grid;

fn main() {
    let grid = Grid::centered(&[6, 5], 1e-4, 1e-3).unwrap();
    // A step edge along depth.
    let m: Vec<C64> = (0..grid.len()).map(|n| C64::new(if grid.unravel(n)[1] >= 3 { 0.05 } else { 0.0 }, 0.0)).collect();
    let g = grad(&grid, &m);
    println!("TV of a 6-cell edge of height 0.05: {:.3}", tv_norm(&g, 2));
    let shrunk = shrink(&g, 2, 0.02);
    let kept: f64 = shrunk.iter().map(|v| v.norm()).sum();
    println!("total gradient magnitude after shrinking by 0.02: {kept:.3}");
    let back = div(&grid, &g);
    let gap = (g.iter().map(|v| v.norm_sqr()).sum::<f64>() - back.iter().zip(&m).map(|(a, b)| (a.conj() * b).re).sum::<f64>()).abs();
    println!("|<Dm, Dm> - <D^T D m, m>| = {gap:.1e}");
}
